//! Finite-difference verification of analytic gradients.

use crate::ndkit::{ParamSet, StreamKey};
use crate::Result;

/// Central-difference step. Chosen so truncation (∝ h²) and f64 roundoff
/// (∝ ε/h) are both far below the 1e-5 acceptance threshold.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Coordinate budget above which a seeded random subset is checked instead
/// of every coordinate.
pub const DEFAULT_MAX_COORDS: usize = 200;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinate with the largest error, as `name[offset]`.
    pub worst_coord: String,
}

/// Compares the gradients produced by `loss_and_grad` against central finite
/// differences and returns the worst relative error.
///
/// `loss_and_grad` must be a deterministic function of the parameter values:
/// it is called with zeroed gradient buffers, returns the scalar loss, and
/// accumulates the analytic gradient. When the parameter set has more than
/// `max_coords` coordinates, a seeded random subset of `max_coords` (at
/// least 100) is checked.
pub fn grad_check<F>(
    mut loss_and_grad: F,
    params: &mut ParamSet,
    step: f64,
    max_coords: usize,
    key: StreamKey,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamSet) -> Result<f64>,
{
    params.zero_grads();
    let _ = loss_and_grad(params)?;
    let n = params.coord_count();
    let analytic: Vec<f64> = (0..n).map(|i| params.get_grad_coord(i)).collect();

    let budget = max_coords.max(100);
    let coords: Vec<usize> = if n <= budget {
        (0..n).collect()
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        key.child("gradcheck-subset").rng().shuffle(&mut idx);
        idx.truncate(budget);
        idx
    };

    let mut max_rel = 0.0;
    let mut worst = String::new();
    for &i in &coords {
        let original = params.get_coord(i);
        params.set_coord(i, original + step);
        params.zero_grads();
        let plus = loss_and_grad(params)?;
        params.set_coord(i, original - step);
        params.zero_grads();
        let minus = loss_and_grad(params)?;
        params.set_coord(i, original);
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if rel > max_rel {
            max_rel = rel;
            worst = params.coord_name(i);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        coords_checked: coords.len(),
        worst_coord: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndkit::Tensor;

    fn quadratic_params() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::vector(vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        p.insert("y", Tensor::vector(vec![3.0]).unwrap()).unwrap();
        p
    }

    /// f = ½‖params‖², grad = params.
    fn half_norm_sq(p: &mut ParamSet) -> Result<f64> {
        let mut loss = 0.0;
        let names: Vec<String> = p.names().map(String::from).collect();
        for name in names {
            let v = p.value(&name)?.clone();
            loss += 0.5 * v.dot(&v)?;
            p.accumulate_grad(&name, &v)?;
        }
        Ok(loss)
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let mut p = quadratic_params();
        let report = grad_check(half_norm_sq, &mut p, DEFAULT_STEP, 200, StreamKey::root(0))
            .unwrap();
        assert_eq!(report.coords_checked, 4);
        assert!(
            report.max_rel_error < 1e-9,
            "rel error {}",
            report.max_rel_error
        );
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut p = quadratic_params();
        let wrong = |p: &mut ParamSet| -> Result<f64> {
            let loss = half_norm_sq(p)?;
            // Fault injection: perturb one gradient coordinate.
            p.grad_mut("y")?.data_mut()[0] += 0.5;
            Ok(loss)
        };
        let report =
            grad_check(wrong, &mut p, DEFAULT_STEP, 200, StreamKey::root(0)).unwrap();
        assert!(report.max_rel_error > 1e-2);
        assert_eq!(report.worst_coord, "y[0]");
    }

    #[test]
    fn subset_is_seeded_and_bounded() {
        let mut p = ParamSet::new();
        p.insert("big", Tensor::zeros(&[500])).unwrap();
        let report = grad_check(
            half_norm_sq,
            &mut p,
            DEFAULT_STEP,
            120,
            StreamKey::root(9),
        )
        .unwrap();
        assert_eq!(report.coords_checked, 120);
    }
}
