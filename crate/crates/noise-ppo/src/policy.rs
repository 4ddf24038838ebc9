//! The prompt-conditioned diagonal-Gaussian noise policy and the value
//! network.
//!
//! The policy maps a prompt embedding through a GELU trunk into two linear
//! heads, one for the mean and one for the per-coordinate log-variance of
//! the initial-noise distribution. With zero-initialized heads the policy
//! is exactly `N(0, I)` for every prompt. Log-density, entropy, and KL to
//! the standard normal are all closed forms of `(μ, logvar)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ndkit::{
    checkpoint, gelu, gelu_prime, MlpCache, MlpSpec, OutputInit, ParamSet, Rng, StreamKey,
    Tensor,
};
use crate::toyworld::PromptTable;
use crate::{Error, Result};

/// Initialization of the mean and log-variance heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Heads start at zero: the fresh policy is exactly the standard normal.
    Zero,
    /// Heads start small-random: the fresh policy is measurably but not
    /// pathologically different from the standard normal.
    Nonzero,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub init: InitMode,
    /// Head weight scale in `Nonzero` mode.
    pub init_scale: f64,
    /// `[lo, hi]` bounds applied to the log-variance output.
    pub logvar_clamp: [f64; 2],
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: vec![64, 64],
            init: InitMode::Zero,
            init_scale: 0.1,
            logvar_clamp: [-8.0, 4.0],
        }
    }
}

/// Mean and clamped log-variance for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mu: Tensor,
    pub logvar: Tensor,
}

/// Network layout shared between the live parameters and gradient-check
/// copies: trunk spec, head specs, frozen embeddings, clamp bounds.
#[derive(Debug, Clone)]
pub struct PolicyArch {
    trunk: Option<MlpSpec>,
    mean: MlpSpec,
    logvar: MlpSpec,
    embeddings: Vec<Tensor>,
    clamp: (f64, f64),
    dim: usize,
}

/// Activation record for one policy forward pass.
#[derive(Debug, Clone)]
pub struct PolicyCache {
    trunk: Option<MlpCache>,
    /// Trunk output before the feature GELU (empty when there is no trunk).
    features_pre: Tensor,
    mean: MlpCache,
    logvar: MlpCache,
    /// Per-coordinate flag: raw log-variance stayed inside the clamp.
    unclamped: Vec<bool>,
}

const TRUNK: &str = "trunk.";
const MEAN: &str = "mean.";
const LOGVAR: &str = "logvar.";

impl PolicyArch {
    fn new(table: &PromptTable, config: &PolicyConfig) -> Result<Self> {
        let [lo, hi] = config.logvar_clamp;
        if !(lo < hi) {
            return Err(Error::Config("logvar clamp needs lo < hi".into()));
        }
        let embed_dim = table.embed_dim();
        let (trunk, feature_dim) = match config.hidden.split_last() {
            Some((&last, rest)) => (
                Some(
                    MlpSpec::new(embed_dim, rest, last)
                        .with_output_init(OutputInit::SmallRandom { scale: 1.0 }),
                ),
                last,
            ),
            None => (None, embed_dim),
        };
        let head_init = match config.init {
            InitMode::Zero => OutputInit::Zero,
            InitMode::Nonzero => OutputInit::SmallRandom {
                scale: config.init_scale,
            },
        };
        let dim = table.dim();
        let mean = MlpSpec::new(feature_dim, &[], dim).with_output_init(head_init);
        let logvar = MlpSpec::new(feature_dim, &[], dim).with_output_init(head_init);
        let embeddings = (0..table.num_prompts())
            .map(|y| table.prompt_embedding(y))
            .collect::<Result<_>>()?;
        Ok(PolicyArch {
            trunk,
            mean,
            logvar,
            embeddings,
            clamp: (lo, hi),
            dim,
        })
    }

    pub fn num_prompts(&self) -> usize {
        self.embeddings.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clamp(&self) -> (f64, f64) {
        self.clamp
    }

    /// Forward pass through trunk, feature GELU, and both heads.
    pub fn forward(
        &self,
        params: &ParamSet,
        prompt: usize,
    ) -> Result<(PolicyOutput, PolicyCache)> {
        let emb = self.embeddings.get(prompt).ok_or(Error::UnknownPrompt {
            id: prompt,
            count: self.embeddings.len(),
        })?;
        let (features_pre, trunk_cache) = match &self.trunk {
            Some(spec) => {
                let (out, cache) = spec.forward(TRUNK, params, emb)?;
                (out, Some(cache))
            }
            None => (emb.clone(), None),
        };
        let features = if self.trunk.is_some() {
            features_pre.map(gelu)
        } else {
            features_pre.clone()
        };
        let (mu, mean_cache) = self.mean.forward(MEAN, params, &features)?;
        let (raw_logvar, logvar_cache) = self.logvar.forward(LOGVAR, params, &features)?;
        let (lo, hi) = self.clamp;
        let unclamped: Vec<bool> = raw_logvar
            .data()
            .iter()
            .map(|&v| (lo..=hi).contains(&v))
            .collect();
        let logvar = raw_logvar.map(|v| v.clamp(lo, hi));
        Ok((
            PolicyOutput { mu, logvar },
            PolicyCache {
                trunk: trunk_cache,
                features_pre,
                mean: mean_cache,
                logvar: logvar_cache,
                unclamped,
            },
        ))
    }

    /// Backward pass from gradients on `(μ, logvar)` into the parameter
    /// gradients. Clamped log-variance coordinates receive zero gradient.
    pub fn backward(
        &self,
        params: &mut ParamSet,
        cache: &PolicyCache,
        grad_mu: &Tensor,
        grad_logvar: &Tensor,
    ) -> Result<()> {
        let mut masked = grad_logvar.clone();
        for (g, &open) in masked.data_mut().iter_mut().zip(&cache.unclamped) {
            if !open {
                *g = 0.0;
            }
        }
        let dmean_features = self.mean.backward(params, &cache.mean, grad_mu)?;
        let dlogvar_features = self.logvar.backward(params, &cache.logvar, &masked)?;
        let mut dfeatures = dmean_features;
        dfeatures.axpy(1.0, &dlogvar_features)?;
        if let (Some(spec), Some(trunk_cache)) = (&self.trunk, &cache.trunk) {
            for (g, &z) in dfeatures
                .data_mut()
                .iter_mut()
                .zip(cache.features_pre.data())
            {
                *g *= gelu_prime(z);
            }
            spec.backward(params, trunk_cache, &dfeatures)?;
        }
        Ok(())
    }

    fn init_params(&self, key: StreamKey) -> Result<ParamSet> {
        let mut params = ParamSet::new();
        let mut rng = key.child("policy-init").rng();
        if let Some(trunk) = &self.trunk {
            trunk.init_into(TRUNK, &mut params, &mut rng)?;
        }
        self.mean.init_into(MEAN, &mut params, &mut rng)?;
        self.logvar.init_into(LOGVAR, &mut params, &mut rng)?;
        Ok(params)
    }
}

/// The noise policy: architecture plus live parameters θ.
#[derive(Debug, Clone)]
pub struct NoisePolicy {
    arch: PolicyArch,
    pub params: ParamSet,
    init: InitMode,
}

impl NoisePolicy {
    pub fn init(table: &PromptTable, config: &PolicyConfig, key: StreamKey) -> Result<Self> {
        let arch = PolicyArch::new(table, config)?;
        let params = arch.init_params(key)?;
        Ok(NoisePolicy {
            arch,
            params,
            init: config.init,
        })
    }

    pub fn arch(&self) -> &PolicyArch {
        &self.arch
    }

    pub fn init_mode(&self) -> InitMode {
        self.init
    }

    pub fn dim(&self) -> usize {
        self.arch.dim
    }

    /// `(μ_θ(y), logvar_θ(y))`, log-variance clamped to the configured range.
    pub fn forward(&self, prompt: usize) -> Result<PolicyOutput> {
        Ok(self.arch.forward(&self.params, prompt)?.0)
    }

    pub fn forward_cached(&self, prompt: usize) -> Result<(PolicyOutput, PolicyCache)> {
        self.arch.forward(&self.params, prompt)
    }

    pub fn backward(
        &mut self,
        cache: &PolicyCache,
        grad_mu: &Tensor,
        grad_logvar: &Tensor,
    ) -> Result<()> {
        let NoisePolicy { arch, params, .. } = self;
        arch.backward(params, cache, grad_mu, grad_logvar)
    }

    /// Deep copy used as the frozen behavior policy during updates.
    pub fn snapshot(&self) -> NoisePolicy {
        self.clone()
    }

    /// Architecture view plus mutable parameters, for loss routines that
    /// read the layout while accumulating gradients.
    pub fn split_mut(&mut self) -> (&PolicyArch, &mut ParamSet) {
        (&self.arch, &mut self.params)
    }

    pub fn save(&self, path: &Path, extra_meta: &BTreeMap<String, String>) -> Result<()> {
        let mut meta = extra_meta.clone();
        meta.insert(
            "init".to_string(),
            match self.init {
                InitMode::Zero => "zero".to_string(),
                InitMode::Nonzero => "nonzero".to_string(),
            },
        );
        meta.insert("kind".to_string(), "policy".to_string());
        checkpoint::save_params(path, &self.params, &meta)
    }

    pub fn load(path: &Path, table: &PromptTable, config: &PolicyConfig) -> Result<Self> {
        let ck = checkpoint::load(path)?;
        if ck.meta.get("kind").map(String::as_str) != Some("policy") {
            return Err(Error::Checkpoint(format!(
                "{}: not a policy checkpoint",
                path.display()
            )));
        }
        let init = match ck.meta.get("init").map(String::as_str) {
            Some("zero") => InitMode::Zero,
            Some("nonzero") => InitMode::Nonzero,
            other => {
                return Err(Error::Checkpoint(format!(
                    "{}: bad init mode {other:?}",
                    path.display()
                )))
            }
        };
        let mut fresh = NoisePolicy::init(table, config, StreamKey::root(0))?;
        fresh.init = init;
        restore_params(&mut fresh.params, ck.into_params()?, path)?;
        Ok(fresh)
    }
}

/// The value network `V_φ(y)`: a GELU MLP from the prompt embedding to a
/// scalar, final layer zero-initialized so a fresh network outputs 0.
#[derive(Debug, Clone)]
pub struct ValueNet {
    spec: MlpSpec,
    pub params: ParamSet,
    embeddings: Vec<Tensor>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ValueConfig {
    pub hidden: Vec<usize>,
}

impl Default for ValueConfig {
    fn default() -> Self {
        ValueConfig {
            hidden: vec![64, 64],
        }
    }
}

impl ValueNet {
    pub fn init(table: &PromptTable, config: &ValueConfig, key: StreamKey) -> Result<Self> {
        let spec = MlpSpec::new(table.embed_dim(), &config.hidden, 1)
            .with_output_init(OutputInit::Zero);
        let mut params = ParamSet::new();
        let mut rng = key.child("value-init").rng();
        spec.init_into("", &mut params, &mut rng)?;
        let embeddings = (0..table.num_prompts())
            .map(|y| table.prompt_embedding(y))
            .collect::<Result<_>>()?;
        Ok(ValueNet {
            spec,
            params,
            embeddings,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn embedding(&self, prompt: usize) -> Result<&Tensor> {
        self.embeddings.get(prompt).ok_or(Error::UnknownPrompt {
            id: prompt,
            count: self.embeddings.len(),
        })
    }

    pub fn forward(&self, prompt: usize) -> Result<f64> {
        Ok(self.forward_cached(prompt)?.0)
    }

    pub fn forward_cached(&self, prompt: usize) -> Result<(f64, MlpCache)> {
        let emb = self.embedding(prompt)?;
        let (out, cache) = self.spec.forward("", &self.params, emb)?;
        let v = out.data()[0];
        if !v.is_finite() {
            return Err(Error::NonFinite("value_forward".into()));
        }
        Ok((v, cache))
    }

    /// Accumulates φ-gradients for a scalar upstream gradient `dv`.
    pub fn backward(&mut self, cache: &MlpCache, dv: f64) -> Result<()> {
        let ValueNet { spec, params, .. } = self;
        let grad = Tensor::vector(vec![dv])?;
        spec.backward(params, cache, &grad)?;
        Ok(())
    }

    pub fn save(&self, path: &Path, extra_meta: &BTreeMap<String, String>) -> Result<()> {
        let mut meta = extra_meta.clone();
        meta.insert("kind".to_string(), "value".to_string());
        checkpoint::save_params(path, &self.params, &meta)
    }

    pub fn load(path: &Path, table: &PromptTable, config: &ValueConfig) -> Result<Self> {
        let ck = checkpoint::load(path)?;
        if ck.meta.get("kind").map(String::as_str) != Some("value") {
            return Err(Error::Checkpoint(format!(
                "{}: not a value checkpoint",
                path.display()
            )));
        }
        let mut fresh = ValueNet::init(table, config, StreamKey::root(0))?;
        restore_params(&mut fresh.params, ck.into_params()?, path)?;
        Ok(fresh)
    }
}

fn restore_params(into: &mut ParamSet, loaded: ParamSet, path: &Path) -> Result<()> {
    let expect: Vec<String> = into.names().map(String::from).collect();
    let got: Vec<String> = loaded.names().map(String::from).collect();
    if expect != got {
        return Err(Error::Checkpoint(format!(
            "{}: parameter names do not match the configured network",
            path.display()
        )));
    }
    for name in &expect {
        let t = loaded.value(name)?;
        if t.shape() != into.value(name)?.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: shape mismatch for `{name}`",
                path.display()
            )));
        }
        *into.value_mut(name)? = t.clone();
    }
    Ok(())
}

/// `x₀ = μ + exp(½ logvar) ⊙ z` with `z ~ N(0, I)`; returns `(x₀, z)` so
/// paired evaluations can reuse the underlying draw.
pub fn sample_noise(out: &PolicyOutput, rng: &mut Rng) -> (Tensor, Tensor) {
    let z = rng.normal_tensor(out.mu.len());
    (apply_noise(out, &z), z)
}

/// Deterministic reparameterization of a given draw `z`.
pub fn apply_noise(out: &PolicyOutput, z: &Tensor) -> Tensor {
    let mut x = out.mu.clone();
    for ((x, &lv), &zv) in x.data_mut().iter_mut().zip(out.logvar.data()).zip(z.data()) {
        *x += (0.5 * lv).exp() * zv;
    }
    x
}

/// `log N(x; μ, diag(exp(logvar)))`:
/// `Σᵢ [−½ logvarᵢ − ½ log 2π − ½ (xᵢ−μᵢ)² e^{−logvarᵢ}]`.
pub fn log_prob(out: &PolicyOutput, x: &Tensor) -> f64 {
    let half_log_tau = 0.5 * (2.0 * PI).ln();
    out.mu
        .data()
        .iter()
        .zip(out.logvar.data())
        .zip(x.data())
        .map(|((&m, &lv), &xv)| {
            let r = xv - m;
            -0.5 * lv - half_log_tau - 0.5 * r * r * (-lv).exp()
        })
        .sum()
}

/// Gradients of [`log_prob`] with respect to `(μ, logvar)`.
pub fn log_prob_grad(out: &PolicyOutput, x: &Tensor) -> (Tensor, Tensor) {
    let n = out.mu.len();
    let mut dmu = vec![0.0; n];
    let mut dlv = vec![0.0; n];
    for i in 0..n {
        let m = out.mu.data()[i];
        let lv = out.logvar.data()[i];
        let r = x.data()[i] - m;
        let inv_var = (-lv).exp();
        dmu[i] = r * inv_var;
        dlv[i] = -0.5 + 0.5 * r * r * inv_var;
    }
    (
        Tensor::vector(dmu).expect("finite"),
        Tensor::vector(dlv).expect("finite"),
    )
}

/// Differential entropy `(d/2)(1 + log 2π) + ½ Σᵢ logvarᵢ`.
pub fn entropy(out: &PolicyOutput) -> f64 {
    let d = out.logvar.len() as f64;
    0.5 * d * (1.0 + (2.0 * PI).ln()) + 0.5 * out.logvar.sum()
}

/// Gradient of [`entropy`]: zero on μ, ½ per logvar coordinate.
pub fn entropy_grad(out: &PolicyOutput) -> (Tensor, Tensor) {
    (
        Tensor::zeros(out.mu.shape()),
        Tensor::filled(out.logvar.shape(), 0.5),
    )
}

/// `KL(N(μ, diag e^{logvar}) ‖ N(0, I)) = ½ Σᵢ [e^{logvarᵢ} + μᵢ² − 1 − logvarᵢ]`.
pub fn kl_to_standard(out: &PolicyOutput) -> f64 {
    out.mu
        .data()
        .iter()
        .zip(out.logvar.data())
        .map(|(&m, &lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
        .sum()
}

/// Gradients of [`kl_to_standard`]: `μ` on the mean, `½(e^{logvar} − 1)` on
/// the log-variance.
pub fn kl_grad(out: &PolicyOutput) -> (Tensor, Tensor) {
    (
        out.mu.clone(),
        out.logvar.map(|lv| 0.5 * (lv.exp() - 1.0)),
    )
}
