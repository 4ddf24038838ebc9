//! Deterministic multi-step sampling and its inversion.
//!
//! Both directions use the same affine update between grid times `t → t′`:
//!
//! ```text
//! x_{t′} = (α_{t′}/α_t) · x_t − ((α_{t′}/α_t) · β_t − β_{t′}) · ε̂(x_t, t)
//! ```
//!
//! Stepping the grid forward denoises `x₀ ↦ x₁`; stepping it backward
//! recovers the noise that generates a given sample. The composition
//! denoise-then-invert is the diagnostic map whose cosine similarity with
//! the original noise is reported by [`golden_cosine`].

use crate::diffusion::{NoisePredictor, NoiseSchedule, TimeGrid};
use crate::ndkit::{cosine_similarity, Tensor};
use crate::{Error, Result};

/// One affine update from time `t` to `t_next` given the prediction
/// `eps_hat` at `(x, t)`. Errors when `t < t_min`, where `α_t → 0` makes
/// the coefficient singular.
pub fn ddim_step(
    x: &Tensor,
    t: f64,
    t_next: f64,
    eps_hat: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    if t < schedule.t_min {
        return Err(Error::TimeBelowMin {
            t,
            t_min: schedule.t_min,
        });
    }
    let (alpha, beta) = schedule.eval(t)?;
    let (alpha_next, beta_next) = schedule.eval(t_next)?;
    let ratio = alpha_next / alpha;
    let coeff = ratio * beta - beta_next;
    let mut out = x.scaled(ratio);
    out.axpy(-coeff, eps_hat)?;
    Ok(out)
}

/// Runs the grid forward from `x₀` at `t_min` to the sample at `t = 1`.
/// A pure function of `(x₀, prompt, grid, predictor)`.
pub fn sample(
    predictor: &dyn NoisePredictor,
    x0: &Tensor,
    prompt: usize,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    x0.check_finite("sample x0")?;
    let nodes = grid.nodes();
    let mut state = x0.clone();
    for w in nodes.windows(2) {
        let eps_hat = predictor.predict(&state, w[0], prompt)?;
        state = ddim_step(&state, w[0], w[1], &eps_hat, schedule)?;
        state.check_finite("sample intermediate state")?;
    }
    Ok(state)
}

/// Runs the grid backward from a sample at `t = 1` down to `t_min`,
/// recovering the noise that generates it.
pub fn invert(
    predictor: &dyn NoisePredictor,
    x1: &Tensor,
    prompt: usize,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    x1.check_finite("invert x1")?;
    let nodes = grid.nodes();
    let mut state = x1.clone();
    for w in nodes.windows(2).rev() {
        let eps_hat = predictor.predict(&state, w[1], prompt)?;
        state = ddim_step(&state, w[1], w[0], &eps_hat, schedule)?;
        state.check_finite("invert intermediate state")?;
    }
    Ok(state)
}

/// The denoise-then-invert composition `F(x₀) = invert(sample(x₀))`.
pub fn denoise_invert(
    predictor: &dyn NoisePredictor,
    x0: &Tensor,
    prompt: usize,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let x1 = sample(predictor, x0, prompt, grid, schedule)?;
    invert(predictor, &x1, prompt, grid, schedule)
}

/// `cos(x₀, F(x₀))` in [−1, 1]; errors on zero-norm input.
pub fn golden_cosine(
    predictor: &dyn NoisePredictor,
    x0: &Tensor,
    prompt: usize,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    if x0.l2_norm() == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let round_trip = denoise_invert(predictor, x0, prompt, grid, schedule)?;
    cosine_similarity(x0, &round_trip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::OracleDenoiser;
    use crate::ndkit::StreamKey;

    fn schedule() -> NoiseSchedule {
        NoiseSchedule::default()
    }

    #[test]
    fn step_to_same_time_is_identity() {
        let s = schedule();
        let x = Tensor::vector(vec![1.0, -2.0]).unwrap();
        let eps = Tensor::vector(vec![0.3, 0.4]).unwrap();
        let out = ddim_step(&x, 0.5, 0.5, &eps, &s).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn step_reproduces_hand_arithmetic() {
        // x = (1,0), t = 0.5 → t′ = 0.75 with ε̂ = (0,1):
        // ratio = 1.5, coeff = 1.5·0.5 − 0.25 = 0.5, so x′ = (1.5, −0.5).
        let s = schedule();
        let x = Tensor::vector(vec![1.0, 0.0]).unwrap();
        let eps = Tensor::vector(vec![0.0, 1.0]).unwrap();
        let out = ddim_step(&x, 0.5, 0.75, &eps, &s).unwrap();
        assert!((out.data()[0] - 1.5).abs() < 1e-15);
        assert!((out.data()[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn step_transports_the_interpolant_exactly() {
        // If x = α_t x₁ + β_t ε and ε̂ = ε, the update lands on
        // α_{t′} x₁ + β_{t′} ε for any t′.
        let s = schedule();
        let x1 = Tensor::vector(vec![0.7, -1.2, 0.1]).unwrap();
        let eps = Tensor::vector(vec![-0.4, 0.9, 2.0]).unwrap();
        for (t, t_next) in [(0.3, 0.8), (0.9, 0.2), (0.5, 1.0)] {
            let mut x = x1.scaled(t);
            x.axpy(1.0 - t, &eps).unwrap();
            let out = ddim_step(&x, t, t_next, &eps, &s).unwrap();
            let mut expect = x1.scaled(t_next);
            expect.axpy(1.0 - t_next, &eps).unwrap();
            for (a, b) in out.data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-12, "t={t} t'={t_next}");
            }
        }
    }

    #[test]
    fn step_below_t_min_rejected() {
        let s = schedule();
        let x = Tensor::vector(vec![1.0]).unwrap();
        let eps = Tensor::vector(vec![0.0]).unwrap();
        assert!(ddim_step(&x, 0.005, 0.5, &eps, &s).is_err());
    }

    #[test]
    fn forward_then_back_with_same_eps_is_identity() {
        // Affine invertibility: composing t → t′ → t with the same ε̂.
        let s = schedule();
        let x = Tensor::vector(vec![0.4, 1.7]).unwrap();
        let eps = Tensor::vector(vec![-0.2, 0.6]).unwrap();
        let fwd = ddim_step(&x, 0.25, 0.75, &eps, &s).unwrap();
        let back = ddim_step(&fwd, 0.75, 0.25, &eps, &s).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_is_deterministic() {
        let s = schedule();
        let oracle = OracleDenoiser::single(Tensor::vector(vec![1.0, 1.0]).unwrap(), 0.5).unwrap();
        let grid = TimeGrid::uniform(&s, 4).unwrap();
        let x0 = Tensor::vector(vec![0.3, -0.9]).unwrap();
        let a = sample(&oracle, &x0, 0, &grid, &s).unwrap();
        let b = sample(&oracle, &x0, 0, &grid, &s).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn single_step_oracle_matches_hand_computation() {
        // N = 1: one affine step from t_min to 1. With ε̂ the oracle value at
        // (x₀, t_min), the update is x₁ = (1/α)x₀ − ((1/α)β − 0)·ε̂.
        let s = schedule();
        let mean = Tensor::vector(vec![2.0, 0.0]).unwrap();
        let std = 0.3;
        let oracle = OracleDenoiser::single(mean.clone(), std).unwrap();
        let grid = TimeGrid::uniform(&s, 1).unwrap();
        let x0 = Tensor::vector(vec![0.5, -1.0]).unwrap();

        let t = s.t_min;
        let (alpha, beta) = (t, 1.0 - t);
        let denom = alpha * alpha * std * std + beta * beta;
        let eps_hat: Vec<f64> = x0
            .data()
            .iter()
            .zip(mean.data())
            .map(|(x, m)| beta * (x - alpha * m) / denom)
            .collect();
        let ratio = 1.0 / alpha;
        let coeff = ratio * beta;
        let expect: Vec<f64> = x0
            .data()
            .iter()
            .zip(&eps_hat)
            .map(|(x, e)| ratio * x - coeff * e)
            .collect();

        let got = sample(&oracle, &x0, 0, &grid, &s).unwrap();
        for (a, b) in got.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10, "got {a}, expected {b}");
        }
    }

    #[test]
    fn single_step_inversion_is_the_inverse_affine_map() {
        // N = 1 with a predictor that ignores its input: the forward step is
        // an invertible affine map and the backward step is its inverse.
        struct Constant(Tensor);
        impl NoisePredictor for Constant {
            fn predict(&self, _x: &Tensor, _t: f64, _p: usize) -> Result<Tensor> {
                Ok(self.0.clone())
            }
            fn action_dim(&self) -> usize {
                self.0.len()
            }
        }
        let s = schedule();
        let grid = TimeGrid::uniform(&s, 1).unwrap();
        let pred = Constant(Tensor::vector(vec![0.8, -0.3]).unwrap());
        let x0 = Tensor::vector(vec![1.1, 0.2]).unwrap();
        let x1 = sample(&pred, &x0, 0, &grid, &s).unwrap();
        let back = invert(&pred, &x1, 0, &grid, &s).unwrap();
        for (a, b) in back.data().iter().zip(x0.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn oracle_round_trip_cosine_high_at_fine_grid() {
        let s = schedule();
        let oracle = OracleDenoiser::single(Tensor::vector(vec![1.5, -0.5]).unwrap(), 0.2).unwrap();
        let grid = TimeGrid::uniform(&s, 64).unwrap();
        let mut rng = StreamKey::root(12).child("roundtrip").rng();
        let mut worst: f64 = 1.0;
        for _ in 0..50 {
            let x0 = rng.normal_tensor(2);
            let c = golden_cosine(&oracle, &x0, 0, &grid, &s).unwrap();
            worst = worst.min(c);
        }
        assert!(worst >= 0.99, "worst cosine {worst}");
    }

    #[test]
    fn discretization_error_shrinks_with_more_steps() {
        // Refining 8 → 64 must move the sample less than refining 2 → 8.
        let s = schedule();
        let oracle = OracleDenoiser::single(Tensor::vector(vec![1.0, 2.0]).unwrap(), 0.4).unwrap();
        let grids: Vec<TimeGrid> = [2usize, 8, 64]
            .iter()
            .map(|&n| TimeGrid::uniform(&s, n).unwrap())
            .collect();
        let mut rng = StreamKey::root(3).child("refine").rng();
        let mut coarse = 0.0;
        let mut fine = 0.0;
        for _ in 0..20 {
            let x0 = rng.normal_tensor(2);
            let at: Vec<Tensor> = grids
                .iter()
                .map(|g| sample(&oracle, &x0, 0, g, &s).unwrap())
                .collect();
            coarse += at[0].sub(&at[1]).unwrap().l2_norm();
            fine += at[1].sub(&at[2]).unwrap().l2_norm();
        }
        assert!(fine < coarse, "fine {fine} vs coarse {coarse}");
    }

    #[test]
    fn golden_cosine_stub_extremes() {
        let a = Tensor::vector(vec![0.5, -1.0]).unwrap();
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&a, &a.scaled(-1.0)).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn golden_cosine_rejects_zero_input() {
        let s = schedule();
        let oracle = OracleDenoiser::single(Tensor::zeros(&[2]), 1.0).unwrap();
        let grid = TimeGrid::uniform(&s, 4).unwrap();
        assert!(golden_cosine(&oracle, &Tensor::zeros(&[2]), 0, &grid, &s).is_err());
    }
}
