use crate::error::{Error, Result};
use crate::problems::{BatchHandle, BilevelProblem, Vector};

/// Source of inner Hessian-vector products.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HvpOracle {
    /// Closed-form products; only problems that provide them (quadratics).
    Analytic,
    /// `(∇L2(x + hv) − ∇L2(x − hv)) / 2h` with `h = fd_step / max(1, ‖v‖)`.
    FiniteDifference { fd_step: f64 },
}

impl Default for HvpOracle {
    fn default() -> Self {
        HvpOracle::FiniteDifference { fd_step: 1e-5 }
    }
}

impl HvpOracle {
    pub(crate) fn validate(&self) -> Result<()> {
        match *self {
            HvpOracle::FiniteDifference { fd_step } if !(fd_step > 0.0) => {
                Err(Error::InvalidArgument(format!("fd_step must be positive, got {fd_step}")))
            }
            _ => Ok(()),
        }
    }

    fn fd<F>(fd_step: f64, w: &Vector, v: &Vector, grad: F) -> Result<Vector>
    where
        F: Fn(&Vector) -> Result<Vector>,
    {
        let h = fd_step / v.norm().max(1.0);
        let plus = grad(&(w + v * h))?;
        let minus = grad(&(w - v * h))?;
        Ok((plus - minus) / (2.0 * h))
    }

    /// `∇²_ww L2(λ, w) · v`.
    pub fn hvp_ww(
        &self,
        problem: &dyn BilevelProblem,
        lambda: &Vector,
        w: &Vector,
        v: &Vector,
        batch: Option<&BatchHandle>,
    ) -> Result<Vector> {
        match *self {
            HvpOracle::Analytic => problem
                .inner_hvp_ww(lambda, w, v)
                .ok_or_else(|| Error::InvalidArgument("problem has no analytic Hessian-vector product".into())),
            HvpOracle::FiniteDifference { fd_step } => {
                Self::fd(fd_step, w, v, |x| Ok(problem.inner(lambda, x, batch)?.grad_w))
            }
        }
    }

    /// `∇²_λw L2(λ, w) · v`, a vector in `λ`-space.
    pub fn hvp_lw(
        &self,
        problem: &dyn BilevelProblem,
        lambda: &Vector,
        w: &Vector,
        v: &Vector,
        batch: Option<&BatchHandle>,
    ) -> Result<Vector> {
        match *self {
            HvpOracle::Analytic => problem
                .inner_hvp_lw(lambda, w, v)
                .ok_or_else(|| Error::InvalidArgument("problem has no analytic Hessian-vector product".into())),
            HvpOracle::FiniteDifference { fd_step } => {
                Self::fd(fd_step, w, v, |x| Ok(problem.inner(lambda, x, batch)?.grad_lambda))
            }
        }
    }
}
