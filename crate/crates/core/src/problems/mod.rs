//! The bilevel problem capability and the built-in problem families.
//!
//! A [`BilevelProblem`] exposes the outer objective `L1(λ, w)` and the inner
//! objective `L2(λ, w)` together with their gradients in both arguments. Every
//! evaluator accepts an optional [`BatchHandle`]; `None` means the full batch.

mod data;
mod quadratic;
mod sampling;

pub use data::{gen_sources, DataSource, Generator, SourceSpec, SyntheticDataset, Task};
pub use quadratic::{make_quadratic, QuadraticInstance, QuadraticSpec};
pub use sampling::{sample_batch, BatchHandle, Origin, SamplerConfig};

use nalgebra::DVector;

use crate::error::Result;

pub type Vector = DVector<f64>;

/// Value and both partial gradients of one objective at `(λ, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub grad_lambda: Vector,
    pub grad_w: Vector,
}

impl Evaluation {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad_lambda.iter().all(|v| v.is_finite())
            && self.grad_w.iter().all(|v| v.is_finite())
    }
}

/// Smoothness and strong-convexity constants.
///
/// Lipschitz constants that cannot be bounded for a problem are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConstants {
    /// Strong-convexity modulus of `L2(λ, ·)`.
    pub mu2: f64,
    /// Lipschitz constant of `L1` in `w`.
    pub ell10: Option<f64>,
    /// Gradient Lipschitz constant of `L1`.
    pub ell11: Option<f64>,
    /// Gradient Lipschitz constant of `L2`.
    pub ell21: Option<f64>,
    /// Hessian Lipschitz constant of `L2`.
    pub ell22: Option<f64>,
}

impl ProblemConstants {
    /// `max{ℓ10, ℓ11, ℓ21, ℓ22} / μ2` over the constants that are known.
    pub fn kappa(&self) -> Option<f64> {
        [self.ell10, self.ell11, self.ell21, self.ell22]
            .into_iter()
            .flatten()
            .reduce(f64::max)
            .map(|m| m / self.mu2)
    }

    /// `C0 = ℓ10 / μ2`, the scale of the `w*^α` distance bound.
    pub fn c0(&self) -> Option<f64> {
        self.ell10.map(|l| l / self.mu2)
    }

    /// Smallest penalty for which the penalized objective is strongly convex in `w`.
    pub fn alpha_threshold(&self) -> Option<f64> {
        self.ell11.map(|l| 2.0 * l / self.mu2)
    }
}

/// Outer/inner objective pair of a bilevel program
/// `min_λ L1(λ, w*(λ))` s.t. `w*(λ) = argmin_w L2(λ, w)`.
pub trait BilevelProblem: Send + Sync {
    fn dim_lambda(&self) -> usize;
    fn dim_w(&self) -> usize;
    fn constants(&self) -> &ProblemConstants;

    /// `L1` and its gradients.
    fn outer(&self, lambda: &Vector, w: &Vector, batch: Option<&BatchHandle>) -> Result<Evaluation>;

    /// `L2` and its gradients.
    fn inner(&self, lambda: &Vector, w: &Vector, batch: Option<&BatchHandle>) -> Result<Evaluation>;

    fn outer_value(&self, lambda: &Vector, w: &Vector, batch: Option<&BatchHandle>) -> Result<f64> {
        Ok(self.outer(lambda, w, batch)?.value)
    }

    fn inner_value(&self, lambda: &Vector, w: &Vector, batch: Option<&BatchHandle>) -> Result<f64> {
        Ok(self.inner(lambda, w, batch)?.value)
    }

    /// Draws the minibatch for `(origin, step)`. Problems without data return
    /// `None`, meaning every evaluation is full batch.
    fn sample_batch(
        &self,
        _sampler: &SamplerConfig,
        _origin: Origin,
        _step: u64,
    ) -> Result<Option<BatchHandle>> {
        Ok(None)
    }

    /// Exact `∇²_ww L2 · v`, when the problem has a closed form.
    fn inner_hvp_ww(&self, _lambda: &Vector, _w: &Vector, _v: &Vector) -> Option<Vector> {
        None
    }

    /// Exact `∇²_λw L2 · v` (a `dim_lambda` vector), when available.
    fn inner_hvp_lw(&self, _lambda: &Vector, _w: &Vector, _v: &Vector) -> Option<Vector> {
        None
    }

    /// Probability vector that `λ` parameterizes, for reweighting problems.
    fn mixture_weights(&self, _lambda: &Vector) -> Option<Vector> {
        None
    }

    /// Whether `L2(λ, ·)` is `μ2`-strongly convex for this instance.
    fn inner_strongly_convex(&self) -> bool {
        true
    }
}

impl<P: BilevelProblem + ?Sized> BilevelProblem for &P {
    fn dim_lambda(&self) -> usize {
        (**self).dim_lambda()
    }
    fn dim_w(&self) -> usize {
        (**self).dim_w()
    }
    fn constants(&self) -> &ProblemConstants {
        (**self).constants()
    }
    fn outer(&self, lambda: &Vector, w: &Vector, batch: Option<&BatchHandle>) -> Result<Evaluation> {
        (**self).outer(lambda, w, batch)
    }
    fn inner(&self, lambda: &Vector, w: &Vector, batch: Option<&BatchHandle>) -> Result<Evaluation> {
        (**self).inner(lambda, w, batch)
    }
    fn sample_batch(
        &self,
        sampler: &SamplerConfig,
        origin: Origin,
        step: u64,
    ) -> Result<Option<BatchHandle>> {
        (**self).sample_batch(sampler, origin, step)
    }
    fn inner_hvp_ww(&self, lambda: &Vector, w: &Vector, v: &Vector) -> Option<Vector> {
        (**self).inner_hvp_ww(lambda, w, v)
    }
    fn inner_hvp_lw(&self, lambda: &Vector, w: &Vector, v: &Vector) -> Option<Vector> {
        (**self).inner_hvp_lw(lambda, w, v)
    }
    fn mixture_weights(&self, lambda: &Vector) -> Option<Vector> {
        (**self).mixture_weights(lambda)
    }
    fn inner_strongly_convex(&self) -> bool {
        (**self).inner_strongly_convex()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_and_c0() {
        let c = ProblemConstants {
            mu2: 2.0,
            ell10: Some(3.0),
            ell11: Some(1.0),
            ell21: Some(5.0),
            ell22: None,
        };
        assert_eq!(c.kappa(), Some(2.5));
        assert_eq!(c.c0(), Some(1.5));
        assert_eq!(c.alpha_threshold(), Some(1.0));
    }
}
