//! Second-order hypergradient baselines.
//!
//! Each estimator approximates the implicit-differentiation hypergradient
//! `∇_λL1 − ∇²_λwL2 · [∇²_wwL2]⁻¹ · ∇_wL1` at the end of an inner
//! gradient-descent solve, touching curvature only through Hessian-vector
//! products from an [`HvpOracle`].

mod descent;
mod hvp;
mod hypergrad;
mod inner;

pub use descent::{outer_descent, ExactHypergrad, HypergradEstimator, Method};
pub use hvp::HvpOracle;
pub use hypergrad::{
    cg_hypergrad, conjugate_gradient, neumann_terms, reverse_hypergrad, stocbio_hypergrad, CgSolve, Hypergrad,
};
pub use inner::{inner_solve, inner_solve_tape};

use crate::error::{Error, Result};
use crate::problems::{ProblemConstants, SamplerConfig};

/// Budgets shared by the baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    /// Inner gradient steps `T` per hypergradient.
    pub inner_steps: usize,
    pub inner_step_size: f64,
    /// Neumann terms `Q`.
    pub neumann_terms: usize,
    /// Neumann scale `η_N`; must stay below `1/ℓ21`.
    pub neumann_scale: f64,
    pub cg_iterations: usize,
    /// Absolute tolerance on the CG residual norm.
    pub cg_tolerance: f64,
    /// Inner steps differentiated in reverse; at most `inner_steps`.
    pub unroll_depth: usize,
    pub hvp: HvpOracle,
    /// Minibatch sampling for the Neumann estimator; `None` is full batch.
    pub stocbio_batches: Option<SamplerConfig>,
}

impl BaselineConfig {
    /// Defaults sized from the problem constants: `T = 100`, inner step `1/ℓ21`,
    /// `Q = 64`, `η_N = 0.5/ℓ21`, 100 CG iterations at tolerance `1e-8`, full unroll.
    pub fn for_constants(constants: &ProblemConstants, hvp: HvpOracle) -> Self {
        let ell21 = constants.ell21.unwrap_or(1.0).max(f64::MIN_POSITIVE);
        Self {
            inner_steps: 100,
            inner_step_size: 1.0 / ell21,
            neumann_terms: 64,
            neumann_scale: 0.5 / ell21,
            cg_iterations: 100,
            cg_tolerance: 1e-8,
            unroll_depth: 100,
            hvp,
            stocbio_batches: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == 0 {
            return Err(Error::InvalidArgument("inner_steps must be at least 1".into()));
        }
        if !(self.inner_step_size >= 0.0) || !(self.neumann_scale > 0.0) || !(self.cg_tolerance > 0.0) {
            return Err(Error::InvalidArgument(
                "inner_step_size must be >= 0, neumann_scale and cg_tolerance > 0".into(),
            ));
        }
        if self.neumann_terms == 0 || self.cg_iterations == 0 || self.unroll_depth == 0 {
            return Err(Error::InvalidArgument(
                "neumann_terms, cg_iterations and unroll_depth must be at least 1".into(),
            ));
        }
        if self.unroll_depth > self.inner_steps {
            return Err(Error::InvalidArgument(format!(
                "unroll_depth {} exceeds the {} stored inner steps",
                self.unroll_depth, self.inner_steps
            )));
        }
        self.hvp.validate()?;
        if let Some(s) = &self.stocbio_batches {
            s.validate()?;
        }
        Ok(())
    }
}
