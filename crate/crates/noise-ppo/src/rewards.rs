//! Bounded synthetic reward components and their weighted composite.
//!
//! Rewards score the generated sample `x₁` (never intermediate sampler
//! states): a prompt-anchored alignment kernel, a prompt-independent
//! radial "aesthetic" kernel, and an optional round-trip cosine diagnostic
//! that needs the sampler itself.

use serde::{Deserialize, Serialize};

use crate::diffusion::{golden_cosine, NoisePredictor, NoiseSchedule, TimeGrid};
use crate::ndkit::Tensor;
use crate::toyworld::PromptTable;
use crate::{Error, Result};

/// One reward component.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardSpec {
    /// `exp(−‖x₁ − c_y‖² / (2h²))`: 1 at the prompt's target center.
    Align { bandwidth: f64 },
    /// `exp(−(‖x₁‖ − r)² / (2h²))`: 1 on the sphere of radius `r`,
    /// independent of the prompt.
    Aesthetic { radius: f64, bandwidth: f64 },
    /// Round-trip cosine of the initial noise under denoise-then-invert.
    /// Diagnostic; needs a sampler in the evaluation context.
    GoldenCosine,
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        let bandwidth = match self {
            RewardSpec::Align { bandwidth } => *bandwidth,
            RewardSpec::Aesthetic { bandwidth, .. } => *bandwidth,
            RewardSpec::GoldenCosine => return Ok(()),
        };
        if !(bandwidth > 0.0) {
            return Err(Error::Config("reward bandwidth must be > 0".into()));
        }
        Ok(())
    }

    /// Short label used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            RewardSpec::Align { .. } => "align",
            RewardSpec::Aesthetic { .. } => "aesthetic",
            RewardSpec::GoldenCosine => "golden_cosine",
        }
    }
}

/// Weighted sum of components: `R(y, x₀) = Σᵢ wᵢ Rᵢ(y, x₁)`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CompositeReward {
    pub components: Vec<WeightedReward>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WeightedReward {
    #[serde(flatten)]
    pub spec: RewardSpec,
    pub weight: f64,
}

impl Default for CompositeReward {
    fn default() -> Self {
        // One radial component plus two alignment components, mirroring a
        // (0.2, 0.4, 0.4) aesthetic/alignment/alignment weighting.
        CompositeReward {
            components: vec![
                WeightedReward {
                    spec: RewardSpec::Aesthetic {
                        radius: 2.0,
                        bandwidth: 0.5,
                    },
                    weight: 0.2,
                },
                WeightedReward {
                    spec: RewardSpec::Align { bandwidth: 0.5 },
                    weight: 0.4,
                },
                WeightedReward {
                    spec: RewardSpec::Align { bandwidth: 0.5 },
                    weight: 0.4,
                },
            ],
        }
    }
}

/// Everything the components may need at evaluation time. The sampler is
/// only required when a `GoldenCosine` component is present.
pub struct RewardContext<'a> {
    pub table: &'a PromptTable,
    pub sampler: Option<SamplerContext<'a>>,
}

pub struct SamplerContext<'a> {
    pub predictor: &'a dyn NoisePredictor,
    pub grid: &'a TimeGrid,
    pub schedule: &'a NoiseSchedule,
}

/// Component values and their weighted sum for one sample.
#[derive(Debug, Clone)]
pub struct RewardBreakdown {
    /// (label, unweighted value) per component, in configuration order.
    pub components: Vec<(&'static str, f64)>,
    pub total: f64,
}

/// `exp(−‖x₁ − c_y‖² / (2h²))`, in (0, 1].
pub fn align_reward(table: &PromptTable, prompt: usize, x1: &Tensor, bandwidth: f64) -> Result<f64> {
    let center = table.center(prompt)?;
    let diff = x1.sub(center)?;
    let sq = diff.dot(&diff)?;
    Ok((-sq / (2.0 * bandwidth * bandwidth)).exp())
}

/// `exp(−(‖x₁‖ − r)² / (2h²))`, in (0, 1]; depends on `x₁` only through its
/// norm.
pub fn aesthetic_reward(x1: &Tensor, radius: f64, bandwidth: f64) -> f64 {
    let r = x1.l2_norm();
    (-(r - radius) * (r - radius) / (2.0 * bandwidth * bandwidth)).exp()
}

impl CompositeReward {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("composite reward needs a component".into()));
        }
        for c in &self.components {
            c.spec.validate()?;
            if !c.weight.is_finite() {
                return Err(Error::Config("reward weight must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn needs_sampler(&self) -> bool {
        self.components
            .iter()
            .any(|c| matches!(c.spec, RewardSpec::GoldenCosine))
    }

    /// Evaluates every component on `(y, x₀, x₁)` and returns the weighted
    /// total. `x₀` is only consulted by the round-trip diagnostic.
    pub fn eval(
        &self,
        ctx: &RewardContext,
        prompt: usize,
        x0: &Tensor,
        x1: &Tensor,
    ) -> Result<RewardBreakdown> {
        let mut components = Vec::with_capacity(self.components.len());
        let mut total = 0.0;
        for c in &self.components {
            let value = match &c.spec {
                RewardSpec::Align { bandwidth } => {
                    align_reward(ctx.table, prompt, x1, *bandwidth)?
                }
                RewardSpec::Aesthetic { radius, bandwidth } => {
                    aesthetic_reward(x1, *radius, *bandwidth)
                }
                RewardSpec::GoldenCosine => {
                    let s = ctx.sampler.as_ref().ok_or_else(|| {
                        Error::Config("golden_cosine reward needs a sampler context".into())
                    })?;
                    golden_cosine(s.predictor, x0, prompt, s.grid, s.schedule)?
                }
            };
            total += c.weight * value;
            components.push((c.spec.label(), value));
        }
        if !total.is_finite() {
            return Err(Error::NonFinite("composite reward".into()));
        }
        Ok(RewardBreakdown { components, total })
    }
}
