//! Numerical tolerances shared by the crate and its test suites.

/// Step for central finite differences.
pub const FD_STEP: f64 = 1e-5;
/// Maximum relative error accepted between analytic and numeric gradients.
pub const FD_MAX_RELATIVE_ERROR: f64 = 1e-4;
/// Denominator floor for the relative error, so gradients that are
/// numerically zero are compared in absolute terms.
pub const FD_RELATIVE_FLOOR: f64 = 1e-5;
/// Agreement required between two routes computing the same quantity.
pub const RECOMPUTE_TOL: f64 = 1e-12;
/// Bound below which a gradient norm counts as zero.
pub const ZERO_GRAD_TOL: f64 = 1e-10;
