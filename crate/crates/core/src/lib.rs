//! Fully first-order bilevel optimization through a penalized minimax
//! reformulation, applied to data reweighting.
//!
//! * [`problems`]: the bilevel problem capability, quadratic fixtures, synthetic data and sampling.
//! * [`reweight`]: softmax source reweighting and per-example hyper-cleaning.
//! * [`minimax`]: the single-loop block-coordinate minimax solver.
//! * [`baselines`]: Neumann-series, conjugate-gradient and truncated reverse-mode hypergradients.
//! * [`oracle`]: closed forms on quadratics, finite differences and penalty-gap checks.
//! * [`harness`]: experiment presets, configuration, plots and the verification report.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod io;
pub mod minimax;
pub mod oracle;
pub mod problems;
pub mod reweight;
pub mod rng;

pub use error::{Error, Result};
pub use problems::Vector;
