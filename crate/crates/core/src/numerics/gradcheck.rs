//! Central finite-difference gradient checking.
//!
//! Used by the test suites as an oracle that is independent of every
//! analytic backward pass in the crate.

use super::rng::Rng;
use super::tolerance::{FD_RELATIVE_FLOOR, FD_STEP};

/// `|analytic - numeric| / max(|analytic|, |numeric|, FD_RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(FD_RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Central difference `(f(p + h e_i) - f(p - h e_i)) / 2h` for one coordinate.
pub fn central_difference(
    params: &mut [f64],
    index: usize,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let original = params[index];
    params[index] = original + FD_STEP;
    let up = loss(params);
    params[index] = original - FD_STEP;
    let down = loss(params);
    params[index] = original;
    (up - down) / (2.0 * FD_STEP)
}

/// Outcome of checking `probes` randomly chosen coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub probes: usize,
    pub max_relative_error: f64,
    pub worst_index: usize,
}

/// Compares `analytic` against central differences of `loss` on `probes`
/// coordinates drawn uniformly (with replacement) from the parameter vector.
pub fn check_gradient(
    params: &[f64],
    analytic: &[f64],
    probes: usize,
    rng: &mut Rng,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> GradCheck {
    let mut work = params.to_vec();
    let mut worst = (0.0, 0);
    for _ in 0..probes {
        let i = rng.below(params.len());
        let numeric = central_difference(&mut work, i, &mut loss);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    GradCheck {
        probes,
        max_relative_error: worst.0,
        worst_index: worst.1,
    }
}
