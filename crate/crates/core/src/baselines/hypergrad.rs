use super::inner::{run_inner, InnerBatches};
use super::{BaselineConfig, HvpOracle};
use crate::error::{Error, Result};
use crate::problems::{BatchHandle, BilevelProblem, Origin, Vector};

/// A hypergradient estimate and the inner iterate it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypergrad {
    pub grad: Vector,
    /// Final inner iterate `w_T`, reusable as the next warm start.
    pub inner: Vector,
}

/// Terms `η_N (I − η_N H)^q · rhs` for `q = 0, …, terms − 1`, with `H = ∇²_wwL2(λ, w)`.
///
/// Aborts when a term's norm exceeds ten times the first term's, which only
/// happens when `η_N` is too large for the curvature.
#[allow(clippy::too_many_arguments)]
pub fn neumann_terms(
    problem: &dyn BilevelProblem,
    lambda: &Vector,
    w: &Vector,
    rhs: &Vector,
    terms: usize,
    scale: f64,
    hvp: &HvpOracle,
    batch: Option<&BatchHandle>,
) -> Result<Vec<Vector>> {
    let mut out = Vec::with_capacity(terms);
    let mut term = rhs * scale;
    let first = term.norm();
    for q in 0..terms {
        let norm = term.norm();
        if !norm.is_finite() || norm > 10.0 * first {
            return Err(Error::NeumannDiverged { term: q, norm });
        }
        let next = if q + 1 < terms {
            let h = hvp.hvp_ww(problem, lambda, w, &term, batch)?;
            Some(&term - h * scale)
        } else {
            None
        };
        out.push(term);
        match next {
            Some(n) => term = n,
            None => break,
        }
    }
    Ok(out)
}

/// Neumann-series (stocBiO) hypergradient after `T` inner steps from `w_init`.
///
/// With `config.stocbio_batches` set, inner steps, the outer gradient and the
/// curvature products use minibatches keyed by `call`.
pub fn stocbio_hypergrad(
    problem: &dyn BilevelProblem,
    lambda: &Vector,
    w_init: &Vector,
    config: &BaselineConfig,
    call: u64,
) -> Result<Hypergrad> {
    config.validate()?;
    let stride = config.inner_steps as u64 + 1;
    let sampler = config.stocbio_batches.as_ref();
    let batches = sampler.map(|s| InnerBatches { sampler: s, base: call * stride });
    let w = run_inner(problem, lambda, w_init, config.inner_steps, config.inner_step_size, batches, None)?;

    let (train, val) = match sampler {
        Some(s) => {
            let key = call * stride + config.inner_steps as u64;
            (problem.sample_batch(s, Origin::Train, key)?, problem.sample_batch(s, Origin::Val, call)?)
        }
        None => (None, None),
    };
    let outer = problem.outer(lambda, &w, val.as_ref())?;
    let terms = neumann_terms(
        problem,
        lambda,
        &w,
        &-&outer.grad_w,
        config.neumann_terms,
        config.neumann_scale,
        &config.hvp,
        train.as_ref(),
    )?;
    let v = terms.into_iter().fold(Vector::zeros(w.len()), |acc, t| acc + t);
    let grad = outer.grad_lambda + config.hvp.hvp_lw(problem, lambda, &w, &v, train.as_ref())?;
    Ok(Hypergrad { grad, inner: w })
}

/// Result of [`conjugate_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub struct CgSolve {
    pub x: Vector,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `H x = b` for symmetric positive-definite `H` given as a product.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&Vector) -> Result<Vector>,
    b: &Vector,
    max_iterations: usize,
    tolerance: f64,
) -> Result<CgSolve> {
    let mut x = Vector::zeros(b.len());
    let mut r = b.clone();
    let mut rr = r.norm_squared();
    if rr.sqrt() <= tolerance {
        return Ok(CgSolve { x, iterations: 0, residual: rr.sqrt() });
    }
    let mut p = r.clone();
    for it in 1..=max_iterations {
        let hp = apply(&p)?;
        let curvature = p.dot(&hp);
        if !(curvature > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "conjugate gradient met curvature {curvature} at iteration {it}"
            )));
        }
        let step = rr / curvature;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &hp, 1.0);
        let rr_next = r.norm_squared();
        if rr_next.sqrt() <= tolerance {
            return Ok(CgSolve { x, iterations: it, residual: rr_next.sqrt() });
        }
        p = &r + p * (rr_next / rr);
        rr = rr_next;
    }
    Err(Error::CgNotConverged { iterations: max_iterations, residual: rr.sqrt() })
}

/// Implicit-differentiation hypergradient with the linear system solved by CG.
pub fn cg_hypergrad(
    problem: &dyn BilevelProblem,
    lambda: &Vector,
    w_init: &Vector,
    config: &BaselineConfig,
) -> Result<Hypergrad> {
    config.validate()?;
    let w = run_inner(problem, lambda, w_init, config.inner_steps, config.inner_step_size, None, None)?;
    let outer = problem.outer(lambda, &w, None)?;
    let solve = conjugate_gradient(
        |v| config.hvp.hvp_ww(problem, lambda, &w, v, None),
        &outer.grad_w,
        config.cg_iterations,
        config.cg_tolerance,
    )?;
    let correction = if solve.iterations == 0 {
        Vector::zeros(lambda.len())
    } else {
        config.hvp.hvp_lw(problem, lambda, &w, &solve.x, None)?
    };
    Ok(Hypergrad { grad: outer.grad_lambda - correction, inner: w })
}

/// Truncated reverse-mode differentiation of the inner gradient-descent map
/// through its last `unroll_depth` steps.
pub fn reverse_hypergrad(
    problem: &dyn BilevelProblem,
    lambda: &Vector,
    w_init: &Vector,
    config: &BaselineConfig,
) -> Result<Hypergrad> {
    config.validate()?;
    let mut tape = Vec::with_capacity(config.inner_steps + 1);
    let s = config.inner_step_size;
    let w = run_inner(problem, lambda, w_init, config.inner_steps, s, None, Some(&mut tape))?;
    if tape.len() != config.inner_steps + 1 {
        return Err(Error::InvalidArgument("inner tape length does not match inner_steps".into()));
    }
    let outer = problem.outer(lambda, &w, None)?;
    let mut grad = outer.grad_lambda;
    let mut adjoint = outer.grad_w;
    let stop = config.inner_steps - config.unroll_depth;
    for t in (stop..config.inner_steps).rev() {
        let wt = &tape[t];
        grad.axpy(-s, &config.hvp.hvp_lw(problem, lambda, wt, &adjoint, None)?, 1.0);
        let h = config.hvp.hvp_ww(problem, lambda, wt, &adjoint, None)?;
        adjoint.axpy(-s, &h, 1.0);
    }
    Ok(Hypergrad { grad, inner: w })
}
