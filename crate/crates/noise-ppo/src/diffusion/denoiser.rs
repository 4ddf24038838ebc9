//! The prompt-conditioned noise predictor and its denoising score matching
//! training loop.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ndkit::{
    adamw_step, checkpoint, AdamWConfig, AdamWState, MlpCache, MlpSpec, OutputInit, ParamSet,
    Rng, StreamKey, Tensor,
};
use crate::toyworld::PromptTable;
use crate::{Error, Result};

/// Number of sinusoidal time features appended to the raw time input.
const SINUSOIDS: usize = 4;

/// Anything that predicts the injected noise `ε̂(x_t, t, y)`.
pub trait NoisePredictor {
    fn predict(&self, x: &Tensor, t: f64, prompt: usize) -> Result<Tensor>;

    fn action_dim(&self) -> usize;
}

/// Raw `t` plus four sinusoidal features: `sin 2πt, cos 2πt, sin 4πt, cos 4πt`.
pub fn time_features(t: f64) -> [f64; 1 + SINUSOIDS] {
    use std::f64::consts::TAU;
    [
        t,
        (TAU * t).sin(),
        (TAU * t).cos(),
        (2.0 * TAU * t).sin(),
        (2.0 * TAU * t).cos(),
    ]
}

/// Configuration of the trainable denoiser network and its training loop.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub hidden: Vec<usize>,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            hidden: vec![64, 64],
            train_steps: 5000,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
        }
    }
}

/// An MLP noise predictor over `concat(x_t, time features, prompt embedding)`.
///
/// Frozen once trained: nothing downstream takes the parameter values
/// mutably, and [`Denoiser::params_hash`] lets callers verify that.
#[derive(Debug, Clone)]
pub struct Denoiser {
    spec: MlpSpec,
    params: ParamSet,
    embeddings: Vec<Tensor>,
    dim: usize,
}

impl Denoiser {
    /// Fresh, untrained network for the given world.
    pub fn init(table: &PromptTable, hidden: &[usize], key: StreamKey) -> Result<Self> {
        let dim = table.dim();
        let input_dim = dim + 1 + SINUSOIDS + table.embed_dim();
        let spec = MlpSpec::new(input_dim, hidden, dim)
            .with_output_init(OutputInit::SmallRandom { scale: 1.0 });
        let mut params = ParamSet::new();
        let mut rng = key.child("denoiser-init").rng();
        spec.init_into("", &mut params, &mut rng)?;
        let embeddings = (0..table.num_prompts())
            .map(|y| table.prompt_embedding(y))
            .collect::<Result<_>>()?;
        Ok(Denoiser {
            spec,
            params,
            embeddings,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Content hash of ψ (values only); constant across any policy run.
    pub fn params_hash(&self) -> String {
        self.params.content_hash()
    }

    /// Mean DSM loss over `batch`, accumulating ψ-gradients into this
    /// network's gradient buffers. Parameter values are untouched.
    pub fn dsm_loss_and_grad(&mut self, batch: &[DsmItem]) -> Result<f64> {
        let Denoiser {
            spec,
            params,
            embeddings,
            dim,
        } = self;
        dsm_core(spec, embeddings, *dim, batch, params)
    }

    pub fn save(&self, path: &Path, extra_meta: &BTreeMap<String, String>) -> Result<()> {
        let mut meta = extra_meta.clone();
        meta.insert("kind".to_string(), "trained".to_string());
        checkpoint::save_params(path, &self.params, &meta)
    }

    /// Restores a trained denoiser; the checkpoint must match the world and
    /// hidden-layer configuration.
    pub fn load(path: &Path, table: &PromptTable, hidden: &[usize]) -> Result<Self> {
        let ck = checkpoint::load(path)?;
        if ck.meta.get("kind").map(String::as_str) != Some("trained") {
            return Err(Error::Checkpoint(format!(
                "{}: not a trained denoiser checkpoint",
                path.display()
            )));
        }
        let mut fresh = Denoiser::init(table, hidden, StreamKey::root(0))?;
        let loaded = ck.into_params()?;
        let fresh_names: Vec<String> = fresh.params.names().map(String::from).collect();
        let loaded_names: Vec<String> = loaded.names().map(String::from).collect();
        if fresh_names != loaded_names {
            return Err(Error::Checkpoint(format!(
                "{}: parameter names do not match the configured network",
                path.display()
            )));
        }
        for name in &fresh_names {
            let t = loaded.value(name)?;
            if t.shape() != fresh.params.value(name)?.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: shape mismatch for `{name}` (world/config mismatch)",
                    path.display()
                )));
            }
            *fresh.params.value_mut(name)? = t.clone();
        }
        Ok(fresh)
    }

    /// DSM loss as a function of a standalone parameter set, for the
    /// gradient checker. Shares this network's layout and embeddings.
    pub fn dsm_objective<'a>(
        &'a self,
        batch: &'a [DsmItem],
    ) -> impl FnMut(&mut ParamSet) -> Result<f64> + 'a {
        move |params: &mut ParamSet| {
            dsm_core(&self.spec, &self.embeddings, self.dim, batch, params)
        }
    }
}

impl NoisePredictor for Denoiser {
    fn predict(&self, x: &Tensor, t: f64, prompt: usize) -> Result<Tensor> {
        let input = input_vector(self.spec.input_dim, &self.embeddings, self.dim, x, t, prompt)?;
        let (out, _) = self.spec.forward("", &self.params, &input)?;
        Ok(out)
    }

    fn action_dim(&self) -> usize {
        self.dim
    }
}

fn input_vector(
    input_dim: usize,
    embeddings: &[Tensor],
    dim: usize,
    x: &Tensor,
    t: f64,
    prompt: usize,
) -> Result<Tensor> {
    if x.shape() != [dim] {
        return Err(Error::shape("denoiser input", &[dim], x.shape()));
    }
    let emb = embeddings.get(prompt).ok_or(Error::UnknownPrompt {
        id: prompt,
        count: embeddings.len(),
    })?;
    let mut data = Vec::with_capacity(input_dim);
    data.extend_from_slice(x.data());
    data.extend_from_slice(&time_features(t));
    data.extend_from_slice(emb.data());
    Tensor::vector(data)
}

fn forward_cached(
    spec: &MlpSpec,
    embeddings: &[Tensor],
    dim: usize,
    params: &ParamSet,
    x: &Tensor,
    t: f64,
    prompt: usize,
) -> Result<(Tensor, MlpCache)> {
    let input = input_vector(spec.input_dim, embeddings, dim, x, t, prompt)?;
    spec.forward("", params, &input)
}

/// Mean of `‖ε̂(α_t x₁ + β_t ε, t, y) − ε‖²` over the batch, with gradients
/// accumulated into `params`.
fn dsm_core(
    spec: &MlpSpec,
    embeddings: &[Tensor],
    dim: usize,
    batch: &[DsmItem],
    params: &mut ParamSet,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("dsm batch must be nonempty".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for item in batch {
        let (alpha, beta) = (item.t, 1.0 - item.t);
        let mut xt = item.x1.scaled(alpha);
        xt.axpy(beta, &item.eps)?;
        let (pred, cache) = forward_cached(spec, embeddings, dim, params, &xt, item.t, item.prompt)?;
        let resid = pred.sub(&item.eps)?;
        loss += scale * resid.dot(&resid)?;
        let grad_out = resid.scaled(2.0 * scale);
        spec.backward(params, &cache, &grad_out)?;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("dsm_loss".into()));
    }
    Ok(loss)
}

/// One score-matching example with its noise draws frozen in, so the loss is
/// a deterministic function of ψ (a requirement of the gradient checker).
#[derive(Debug, Clone)]
pub struct DsmItem {
    pub prompt: usize,
    pub x1: Tensor,
    pub t: f64,
    pub eps: Tensor,
}

/// Draws `(y, x₁, t, ε)` tuples: data from the table, `t ~ Unif[0,1]`,
/// `ε ~ N(0, I)`. The objective samples t over all of [0, 1] even though the
/// sampler only queries `t ≥ t_min`.
pub fn prepare_dsm_batch(
    table: &PromptTable,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<DsmItem>> {
    let prompts = table.train_prompts();
    (0..batch_size)
        .map(|_| {
            let prompt = prompts[rng.below(prompts.len())];
            let x1 = table.sample_data(prompt, rng)?;
            let t = rng.uniform();
            let eps = rng.normal_tensor(table.dim());
            Ok(DsmItem { prompt, x1, t, eps })
        })
        .collect()
}

/// A point on the training loss curve.
#[derive(Debug, Clone, Serialize)]
pub struct DsmLossPoint {
    pub step: usize,
    pub loss: f64,
}

/// Trains a denoiser on the table's data by AdamW on minibatch DSM losses.
/// Returns the network and a subsampled loss curve.
pub fn train_denoiser(
    table: &PromptTable,
    config: &DenoiserConfig,
    key: StreamKey,
) -> Result<(Denoiser, Vec<DsmLossPoint>)> {
    let mut denoiser = Denoiser::init(table, &config.hidden, key)?;
    let mut opt = AdamWState::new(
        denoiser.params(),
        AdamWConfig {
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let mut rng = key.child("dsm-data").rng();
    let log_every = (config.train_steps / 100).max(1);
    let mut curve = Vec::new();
    for step in 0..config.train_steps {
        let batch = prepare_dsm_batch(table, config.batch_size, &mut rng)?;
        denoiser.params.zero_grads();
        let loss = denoiser.dsm_loss_and_grad(&batch)?;
        adamw_step(&mut denoiser.params, &mut opt)?;
        if step % log_every == 0 || step + 1 == config.train_steps {
            curve.push(DsmLossPoint { step, loss });
        }
    }
    Ok((denoiser, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::WorldSpec;

    fn table() -> PromptTable {
        PromptTable::from_spec(&WorldSpec::default()).unwrap()
    }

    #[test]
    fn predict_is_deterministic() {
        let table = table();
        let d = Denoiser::init(&table, &[16], StreamKey::root(5)).unwrap();
        let x = Tensor::vector(vec![0.3, -0.7]).unwrap();
        let a = d.predict(&x, 0.4, 2).unwrap();
        let b = d.predict(&x, 0.4, 2).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn unknown_prompt_rejected() {
        let table = table();
        let d = Denoiser::init(&table, &[16], StreamKey::root(5)).unwrap();
        let x = Tensor::vector(vec![0.0, 0.0]).unwrap();
        assert!(d.predict(&x, 0.5, 8).is_err());
    }

    #[test]
    fn zero_predictor_dsm_loss_is_about_d() {
        // A zero-output network scores E‖ε‖² = d on average; for a batch of
        // B draws the mean lies within 3·√(2d/B) of d.
        let table = table();
        let spec = MlpSpec::new(2 + 5 + 8, &[8], 2).with_output_init(OutputInit::Zero);
        let mut params = ParamSet::new();
        let mut rng = StreamKey::root(1).rng();
        spec.init_into("", &mut params, &mut rng).unwrap();
        let mut d = Denoiser::init(&table, &[8], StreamKey::root(1)).unwrap();
        d.spec = spec;
        d.params = params;

        let b = 4096;
        let mut data_rng = StreamKey::root(2).child("dsm").rng();
        let batch = prepare_dsm_batch(&table, b, &mut data_rng).unwrap();
        d.params.zero_grads();
        let loss = d.dsm_loss_and_grad(&batch).unwrap();
        let dim = 2.0;
        let tol = 3.0 * (2.0 * dim / b as f64).sqrt();
        assert!((loss - dim).abs() < tol, "loss {loss} vs d = {dim} ± {tol}");
    }

    #[test]
    fn empty_batch_rejected() {
        let table = table();
        let mut d = Denoiser::init(&table, &[8], StreamKey::root(1)).unwrap();
        assert!(d.dsm_loss_and_grad(&[]).is_err());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let table = table();
        let config = DenoiserConfig {
            hidden: vec![16],
            train_steps: 20,
            batch_size: 8,
            ..DenoiserConfig::default()
        };
        let (a, _) = train_denoiser(&table, &config, StreamKey::root(33)).unwrap();
        let (b, _) = train_denoiser(&table, &config, StreamKey::root(33)).unwrap();
        assert_eq!(a.params_hash(), b.params_hash());
    }

    #[test]
    fn checkpoint_round_trip_preserves_hash() {
        let table = table();
        let config = DenoiserConfig {
            hidden: vec![16],
            train_steps: 10,
            batch_size: 8,
            ..DenoiserConfig::default()
        };
        let (d, _) = train_denoiser(&table, &config, StreamKey::root(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("denoiser.nppo");
        d.save(&path, &BTreeMap::new()).unwrap();
        let loaded = Denoiser::load(&path, &table, &config.hidden).unwrap();
        assert_eq!(d.params_hash(), loaded.params_hash());
    }
}
