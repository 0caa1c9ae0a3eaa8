//! Ground truth for verification: closed forms on [`QuadraticInstance`],
//! finite differences, penalty-gap scans and curvature probes.
//!
//! [`QuadraticInstance`]: crate::problems::QuadraticInstance

mod checks;
mod finite_diff;
mod quadratic;
mod scans;

pub use checks::{
    curvature_probe, gradient_check, strong_convexity_probe, ConvexityStatus, CurvatureReport, GradientCheck,
};
pub use finite_diff::{finite_diff_grad, relative_error, StepRule};
pub use quadratic::{ift_hypergrad, QuadraticOracle};
pub use scans::{fit_loglog_slope, penalty_gap_scan, wstar_alpha_distance_check, DistanceRow, GapRow, GapScan};
