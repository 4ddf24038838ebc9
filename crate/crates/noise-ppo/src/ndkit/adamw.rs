//! AdamW with decoupled weight decay, plus global-norm gradient clipping.
//!
//! Decoupled Weight Decay Regularization, Loshchilov & Hutter, 2019.
//! <https://arxiv.org/abs/1711.05101>

use std::collections::BTreeMap;

use crate::ndkit::{ParamSet, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Numerical stabilizer added to the denominator.
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-5,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state: step count plus first/second moment buffers mirroring
/// the parameter set they were created from.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl AdamWState {
    pub fn new(params: &ParamSet, config: AdamWConfig) -> Self {
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (name, value, _) in params.iter() {
            first.insert(name.to_string(), Tensor::zeros(value.shape()));
            second.insert(name.to_string(), Tensor::zeros(value.shape()));
        }
        AdamWState {
            config,
            step: 0,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One AdamW update over every parameter in `params`, consuming the current
/// gradient buffers. Weight decay is decoupled: `w ← w(1 − lr·λ)` before the
/// moment-based update, independent of the gradient moments.
pub fn adamw_step(params: &mut ParamSet, state: &mut AdamWState) -> Result<()> {
    if !params.grads_finite() {
        return Err(Error::NonFinite("adamw_step gradients".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c = state.config;
    let bias1 = 1.0 - c.beta1.powi(t);
    let bias2 = 1.0 - c.beta2.powi(t);

    let names: Vec<String> = params.names().map(String::from).collect();
    for name in &names {
        let m = state
            .first
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(format!("{name} (optimizer moment)")))?;
        let v = state
            .second
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(format!("{name} (optimizer moment)")))?;
        let grad = params.grad(name)?.clone();
        let value = params.value_mut(name)?;
        for i in 0..value.len() {
            let g = grad.data()[i];
            let w = &mut value.data_mut()[i];
            *w *= 1.0 - c.learning_rate * c.weight_decay;
            let mi = &mut m.data_mut()[i];
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
            let vi = &mut v.data_mut()[i];
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *w -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    }
    Ok(())
}

/// Scales every gradient so the global (cross-parameter) L2 norm is at most
/// `max_norm`; returns the factor applied (1.0 when already within bound).
///
/// The relative tolerance on the trigger makes repeated clipping a fixed
/// point: rescaling can leave the recomputed norm an ulp above the bound.
pub fn clip_grad_norm(params: &mut ParamSet, max_norm: f64) -> f64 {
    debug_assert!(max_norm > 0.0);
    let norm = params.grad_l2_norm();
    if norm > max_norm * (1.0 + 1e-12) {
        let factor = max_norm / norm;
        params.scale_grads(factor);
        factor
    } else {
        1.0
    }
}
