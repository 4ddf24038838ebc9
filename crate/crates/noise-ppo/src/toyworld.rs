//! Synthetic prompt-conditioned data.
//!
//! A finite prompt vocabulary stands in for text: each prompt id maps to a
//! Gaussian target `N(center_y, s²I)` in a low-dimensional space, and to a
//! fixed embedding vector consumed by the networks. The table is read-only
//! after construction.

use serde::{Deserialize, Serialize};

use crate::ndkit::{Rng, StreamKey, Tensor};
use crate::{Error, Result};

/// Placement of the per-prompt target centers.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CenterLayout {
    /// Centers at angles `2πk/P` on a circle of the given radius, embedded
    /// in the first two coordinates.
    Circle { radius: f64 },
    /// Explicit list of centers, one per prompt.
    Explicit { centers: Vec<Vec<f64>> },
}

/// How prompt embeddings are produced.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedMode {
    /// Unit vector per prompt; embed_dim equals the prompt count.
    OneHot,
    /// Dense rows drawn once from `scale · N(0, 1)` with the given seed.
    Random { dim: usize, scale: f64, seed: u64 },
}

impl Default for EmbedMode {
    fn default() -> Self {
        EmbedMode::OneHot
    }
}

/// Declarative description of a toy world.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    /// Data dimension d.
    pub dim: usize,
    pub num_prompts: usize,
    pub layout: CenterLayout,
    /// Per-prompt target standard deviation.
    pub std: f64,
    #[serde(default)]
    pub embed: EmbedMode,
    /// Prompt ids excluded from training rollouts (evaluation-only).
    /// Empty by default: the policy is prompt-conditioned over a closed
    /// vocabulary, so every prompt is seen in training.
    #[serde(default)]
    pub held_out_prompts: Vec<usize>,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            dim: 2,
            num_prompts: 8,
            layout: CenterLayout::Circle { radius: 2.0 },
            std: 0.15,
            embed: EmbedMode::OneHot,
            held_out_prompts: Vec::new(),
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Config("world dim must be >= 1".into()));
        }
        if self.num_prompts < 2 {
            return Err(Error::Config("world needs at least 2 prompts".into()));
        }
        if !(self.std > 0.0) {
            return Err(Error::Config("world std must be > 0".into()));
        }
        match &self.layout {
            CenterLayout::Circle { radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::Config("circle radius must be > 0".into()));
                }
                if self.dim < 2 {
                    return Err(Error::Config("circle layout needs dim >= 2".into()));
                }
            }
            CenterLayout::Explicit { centers } => {
                if centers.len() != self.num_prompts {
                    return Err(Error::Config(format!(
                        "explicit layout has {} centers for {} prompts",
                        centers.len(),
                        self.num_prompts
                    )));
                }
                if centers.iter().any(|c| c.len() != self.dim) {
                    return Err(Error::Config("explicit center dim mismatch".into()));
                }
            }
        }
        if let EmbedMode::Random { dim, scale, .. } = &self.embed {
            if *dim < 1 || !(*scale > 0.0) {
                return Err(Error::Config("random embed needs dim >= 1, scale > 0".into()));
            }
        }
        if let Some(&id) = self
            .held_out_prompts
            .iter()
            .find(|&&id| id >= self.num_prompts)
        {
            return Err(Error::Config(format!("held-out prompt {id} out of range")));
        }
        Ok(())
    }
}

/// The realized world: target centers, per-prompt stds, and embeddings.
#[derive(Debug, Clone)]
pub struct PromptTable {
    dim: usize,
    centers: Vec<Tensor>,
    stds: Vec<f64>,
    embed_dim: usize,
    /// Row-major `P × embed_dim`.
    embeddings: Vec<f64>,
    held_out: Vec<usize>,
}

impl PromptTable {
    pub fn from_spec(spec: &WorldSpec) -> Result<Self> {
        spec.validate()?;
        let p = spec.num_prompts;
        let centers: Vec<Tensor> = match &spec.layout {
            CenterLayout::Circle { radius } => (0..p)
                .map(|k| {
                    let angle = 2.0 * std::f64::consts::PI * (k as f64) / (p as f64);
                    let mut c = vec![0.0; spec.dim];
                    c[0] = radius * angle.cos();
                    c[1] = radius * angle.sin();
                    Tensor::vector(c)
                })
                .collect::<Result<_>>()?,
            CenterLayout::Explicit { centers } => centers
                .iter()
                .map(|c| Tensor::vector(c.clone()))
                .collect::<Result<_>>()?,
        };
        for i in 0..p {
            for j in (i + 1)..p {
                if centers[i].data() == centers[j].data() {
                    return Err(Error::Config(format!(
                        "prompt centers {i} and {j} coincide"
                    )));
                }
            }
        }
        let (embed_dim, embeddings) = match &spec.embed {
            EmbedMode::OneHot => {
                let mut m = vec![0.0; p * p];
                for k in 0..p {
                    m[k * p + k] = 1.0;
                }
                (p, m)
            }
            EmbedMode::Random { dim, scale, seed } => {
                let mut rng = StreamKey::root(*seed).child("prompt-embed").rng();
                let m: Vec<f64> = (0..p * dim).map(|_| scale * rng.normal()).collect();
                (*dim, m)
            }
        };
        Ok(PromptTable {
            dim: spec.dim,
            centers,
            stds: vec![spec.std; p],
            embed_dim,
            embeddings,
            held_out: spec.held_out_prompts.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_prompts(&self) -> usize {
        self.centers.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn center(&self, prompt: usize) -> Result<&Tensor> {
        self.check_prompt(prompt)?;
        Ok(&self.centers[prompt])
    }

    pub fn std(&self, prompt: usize) -> Result<f64> {
        self.check_prompt(prompt)?;
        Ok(self.stds[prompt])
    }

    /// Prompt ids available for training rollouts.
    pub fn train_prompts(&self) -> Vec<usize> {
        (0..self.num_prompts())
            .filter(|id| !self.held_out.contains(id))
            .collect()
    }

    /// A data draw `x₁ ~ N(center_y, s²I)` for the given prompt.
    pub fn sample_data(&self, prompt: usize, rng: &mut Rng) -> Result<Tensor> {
        let center = self.center(prompt)?;
        let s = self.stds[prompt];
        let mut x = center.clone();
        for v in x.data_mut() {
            *v += s * rng.normal();
        }
        Ok(x)
    }

    /// The fixed embedding row for a prompt.
    pub fn prompt_embedding(&self, prompt: usize) -> Result<Tensor> {
        self.check_prompt(prompt)?;
        let row = &self.embeddings[prompt * self.embed_dim..(prompt + 1) * self.embed_dim];
        Tensor::vector(row.to_vec())
    }

    fn check_prompt(&self, prompt: usize) -> Result<()> {
        if prompt >= self.num_prompts() {
            return Err(Error::UnknownPrompt {
                id: prompt,
                count: self.num_prompts(),
            });
        }
        Ok(())
    }
}
