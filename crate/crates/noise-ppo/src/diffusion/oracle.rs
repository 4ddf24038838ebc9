//! Closed-form noise predictor for Gaussian data.
//!
//! When the data conditioned on a prompt is exactly `N(m, s²I)`, the
//! minimizer of the score-matching objective is available analytically:
//!
//! ```text
//! ε̂(x, t) = β_t (x − α_t m) / (α_t² s² + β_t²)
//! ```
//!
//! which is `E[ε | x_t]` by joint-Gaussian conditioning. This is the exact
//! verification oracle for the sampler, the inversion, and the trained
//! network.

use crate::diffusion::NoisePredictor;
use crate::ndkit::Tensor;
use crate::toyworld::PromptTable;
use crate::{Error, Result};

/// Per-prompt Gaussian parameters `(mean, std)` realizing the optimal
/// predictor in closed form.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    components: Vec<(Tensor, f64)>,
    dim: usize,
}

impl OracleDenoiser {
    /// Oracle for a single Gaussian `N(mean, std²I)`; every prompt id maps
    /// to the same component.
    pub fn single(mean: Tensor, std: f64) -> Result<Self> {
        if !(std > 0.0) {
            return Err(Error::Config("oracle std must be > 0".into()));
        }
        let dim = mean.len();
        Ok(OracleDenoiser {
            components: vec![(mean, std)],
            dim,
        })
    }

    /// Oracle for a prompt table: prompt `y` uses `N(center_y, s_y²I)`.
    pub fn for_table(table: &PromptTable) -> Result<Self> {
        let components = (0..table.num_prompts())
            .map(|y| Ok((table.center(y)?.clone(), table.std(y)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(OracleDenoiser {
            components,
            dim: table.dim(),
        })
    }

    fn component(&self, prompt: usize) -> Result<&(Tensor, f64)> {
        if self.components.len() == 1 {
            return Ok(&self.components[0]);
        }
        self.components.get(prompt).ok_or(Error::UnknownPrompt {
            id: prompt,
            count: self.components.len(),
        })
    }
}

impl NoisePredictor for OracleDenoiser {
    fn predict(&self, x: &Tensor, t: f64, prompt: usize) -> Result<Tensor> {
        if x.shape() != [self.dim] {
            return Err(Error::shape("oracle input", &[self.dim], x.shape()));
        }
        let (mean, std) = self.component(prompt)?;
        let (alpha, beta) = (t, 1.0 - t);
        let denom = alpha * alpha * std * std + beta * beta;
        let centered = x.sub(&mean.scaled(alpha))?;
        Ok(centered.map(|v| beta * v / denom))
    }

    fn action_dim(&self) -> usize {
        self.dim
    }
}
