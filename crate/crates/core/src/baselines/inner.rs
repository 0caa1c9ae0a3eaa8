use crate::error::{ensure_len, Error, Result};
use crate::problems::{BilevelProblem, Origin, SamplerConfig, Vector};

/// Batches for the `t`-th inner step are keyed by `base + t`.
pub(crate) struct InnerBatches<'a> {
    pub sampler: &'a SamplerConfig,
    pub base: u64,
}

pub(crate) fn run_inner(
    problem: &dyn BilevelProblem,
    lambda: &Vector,
    w_init: &Vector,
    steps: usize,
    step_size: f64,
    batches: Option<InnerBatches<'_>>,
    mut tape: Option<&mut Vec<Vector>>,
) -> Result<Vector> {
    if steps == 0 {
        return Err(Error::InvalidArgument("inner solve needs at least one step".into()));
    }
    ensure_len("w_init", problem.dim_w(), w_init.len())?;
    let mut w = w_init.clone();
    if let Some(t) = tape.as_deref_mut() {
        t.clear();
        t.push(w.clone());
    }
    for t in 0..steps {
        let batch = match &batches {
            Some(b) => problem.sample_batch(b.sampler, Origin::Train, b.base + t as u64)?,
            None => None,
        };
        let g = problem.inner(lambda, &w, batch.as_ref())?.grad_w;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "inner gradient".into(), step: t });
        }
        w.axpy(-step_size, &g, 1.0);
        if let Some(tp) = tape.as_deref_mut() {
            tp.push(w.clone());
        }
    }
    Ok(w)
}

/// `steps` full-batch gradient steps on `L2(λ, ·)` from `w_init`.
pub fn inner_solve(
    problem: &dyn BilevelProblem,
    lambda: &Vector,
    w_init: &Vector,
    steps: usize,
    step_size: f64,
) -> Result<Vector> {
    run_inner(problem, lambda, w_init, steps, step_size, None, None)
}

/// Like [`inner_solve`] but returns every iterate `w_0, …, w_T`.
pub fn inner_solve_tape(
    problem: &dyn BilevelProblem,
    lambda: &Vector,
    w_init: &Vector,
    steps: usize,
    step_size: f64,
) -> Result<Vec<Vector>> {
    let mut tape = Vec::with_capacity(steps + 1);
    run_inner(problem, lambda, w_init, steps, step_size, None, Some(&mut tape))?;
    Ok(tape)
}
