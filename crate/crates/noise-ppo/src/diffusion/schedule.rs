//! Linear interpolation noise schedule and the sampler time grid.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The interpolation coefficients `α(t) = t`, `β(t) = 1 − t` defining the
/// conditional path `x_t = α_t x₁ + β_t ε`, with boundary conditions
/// `α(0) = 0, α(1) = 1, β(0) = 1, β(1) = 0`.
///
/// `t_min` is the smallest sampler time: the deterministic update divides by
/// `α_t`, which vanishes at `t = 0`, so the sampler adopts the convention
/// `x_{t_min} := x₀`. Since `β_{t_min} ≈ 1` and `α_{t_min} ≈ 0`, the state at
/// `t_min` is the initial noise up to `O(t_min)` — a controlled approximation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub t_min: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule { t_min: 0.01 }
    }
}

impl NoiseSchedule {
    pub fn new(t_min: f64) -> Result<Self> {
        let s = NoiseSchedule { t_min };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min < 0.1) {
            return Err(Error::Config(format!(
                "t_min must lie in (0, 0.1), got {}",
                self.t_min
            )));
        }
        Ok(())
    }

    /// `(α_t, β_t) = (t, 1 − t)`; errors outside [0, 1].
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange { t });
        }
        Ok((t, 1.0 - t))
    }
}

/// Uniformly spaced sampler times `t_min = t₀ < t₁ < … < t_N = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Grid with `steps` intervals (so `steps + 1` nodes).
    pub fn uniform(schedule: &NoiseSchedule, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("time grid needs at least 1 step".into()));
        }
        schedule.validate()?;
        let n = steps as f64;
        let nodes: Vec<f64> = (0..=steps)
            .map(|i| {
                if i == steps {
                    1.0
                } else {
                    schedule.t_min + (1.0 - schedule.t_min) * (i as f64) / n
                }
            })
            .collect();
        Ok(TimeGrid { nodes })
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
}
