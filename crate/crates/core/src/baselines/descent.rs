use super::hypergrad::{cg_hypergrad, reverse_hypergrad, stocbio_hypergrad, Hypergrad};
use super::BaselineConfig;
use crate::error::{ensure_len, Error, Result};
use crate::minimax::{RunAborted, RunRecord, RunRow};
use crate::oracle::{ift_hypergrad, QuadraticOracle};
use crate::problems::{BilevelProblem, Vector};

/// A hypergradient estimator usable by [`outer_descent`].
pub trait HypergradEstimator {
    fn name(&self) -> &'static str;

    /// Estimate at `λ`, warm-starting the inner solve at `w_init`. `call`
    /// numbers the outer iteration and keys any minibatches.
    fn estimate(&self, problem: &dyn BilevelProblem, lambda: &Vector, w_init: &Vector, call: u64) -> Result<Hypergrad>;
}

/// The three second-order baselines.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    StocBio(BaselineConfig),
    ConjugateGradient(BaselineConfig),
    Reverse(BaselineConfig),
}

impl HypergradEstimator for Method {
    fn name(&self) -> &'static str {
        match self {
            Method::StocBio(_) => "stocbio",
            Method::ConjugateGradient(_) => "cg",
            Method::Reverse(_) => "reverse",
        }
    }

    fn estimate(&self, problem: &dyn BilevelProblem, lambda: &Vector, w_init: &Vector, call: u64) -> Result<Hypergrad> {
        match self {
            Method::StocBio(c) => stocbio_hypergrad(problem, lambda, w_init, c, call),
            Method::ConjugateGradient(c) => cg_hypergrad(problem, lambda, w_init, c),
            Method::Reverse(c) => reverse_hypergrad(problem, lambda, w_init, c),
        }
    }
}

/// Closed-form hypergradient of a quadratic instance.
#[derive(Debug, Clone, Copy)]
pub struct ExactHypergrad<'a> {
    pub oracle: &'a QuadraticOracle,
}

impl HypergradEstimator for ExactHypergrad<'_> {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn estimate(&self, _problem: &dyn BilevelProblem, lambda: &Vector, _w_init: &Vector, _call: u64) -> Result<Hypergrad> {
        Ok(Hypergrad {
            grad: ift_hypergrad(self.oracle, lambda)?,
            inner: self.oracle.w_star(lambda)?,
        })
    }
}

fn row(problem: &dyn BilevelProblem, step: usize, lambda: &Vector, w: &Vector, update_norm: f64) -> Result<RunRow> {
    Ok(RunRow {
        step,
        lambda: lambda.clone(),
        p: problem.mixture_weights(lambda),
        loss_val: problem.outer_value(lambda, w, None)?,
        loss_trn: problem.inner_value(lambda, w, None)?,
        lambda_update_norm: update_norm,
        elapsed_seconds: None,
    })
}

/// Gradient descent on `λ` driven by `estimator`, with the inner iterate
/// warm-started from the previous estimate. Rows follow the solver's CSV schema;
/// `final_u` repeats the final inner iterate.
#[allow(clippy::too_many_arguments)]
pub fn outer_descent(
    problem: &dyn BilevelProblem,
    estimator: &dyn HypergradEstimator,
    lambda0: &Vector,
    w0: &Vector,
    outer_steps: usize,
    outer_step_size: f64,
    log_every: usize,
) -> std::result::Result<RunRecord, RunAborted> {
    let has_weights = problem.mixture_weights(lambda0).is_some();
    let mut record = RunRecord::empty(problem.dim_lambda(), has_weights);
    let checked = ensure_len("lambda0", problem.dim_lambda(), lambda0.len())
        .and_then(|_| ensure_len("w0", problem.dim_w(), w0.len()))
        .and_then(|_| {
            if outer_step_size >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument("outer_step_size must be nonnegative".into()))
            }
        });
    if let Err(error) = checked {
        return Err(RunAborted { record, error });
    }

    let mut lambda = lambda0.clone();
    let mut w = w0.clone();
    let finish = |record: &mut RunRecord, lambda: &Vector, w: &Vector| {
        record.final_lambda = lambda.clone();
        record.final_w = w.clone();
        record.final_u = w.clone();
    };
    match row(problem, 0, &lambda, &w, 0.0) {
        Ok(r) => record.rows.push(r),
        Err(error) => return Err(RunAborted { record, error }),
    }
    for k in 0..outer_steps {
        let est = match estimator.estimate(problem, &lambda, &w, k as u64) {
            Ok(e) if e.grad.iter().all(|v| v.is_finite()) => e,
            Ok(_) => {
                finish(&mut record, &lambda, &w);
                let error = Error::NonFinite { what: format!("{} hypergradient", estimator.name()), step: k };
                return Err(RunAborted { record, error });
            }
            Err(error) => {
                finish(&mut record, &lambda, &w);
                return Err(RunAborted { record, error });
            }
        };
        lambda.axpy(-outer_step_size, &est.grad, 1.0);
        w = est.inner;
        let step = k + 1;
        if step == outer_steps || (log_every > 0 && step % log_every == 0) {
            match row(problem, step, &lambda, &w, est.grad.norm()) {
                Ok(r) => record.rows.push(r),
                Err(error) => {
                    finish(&mut record, &lambda, &w);
                    return Err(RunAborted { record, error });
                }
            }
        }
    }
    finish(&mut record, &lambda, &w);
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::HvpOracle;
    use crate::problems::{make_quadratic, QuadraticInstance};

    #[test]
    fn exact_descent_reaches_scalar_minimizer() {
        // 𝓛(λ) = ½(λ/2 − 1)² has curvature 1/4.
        let o = QuadraticOracle::new(QuadraticInstance::scalar_example()).unwrap();
        let est = ExactHypergrad { oracle: &o };
        let rec = outer_descent(o.instance(), &est, &Vector::zeros(1), &Vector::zeros(1), 200, 0.5 / 0.25, 50).unwrap();
        assert!((rec.final_lambda[0] - 2.0).abs() < 1e-6);
        assert_eq!(rec.rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 50, 100, 150, 200]);
    }

    #[test]
    fn zero_steps_returns_initial_lambda() {
        let o = QuadraticOracle::new(QuadraticInstance::scalar_example()).unwrap();
        let l0 = Vector::from_vec(vec![0.3]);
        let rec = outer_descent(o.instance(), &ExactHypergrad { oracle: &o }, &l0, &Vector::zeros(1), 0, 1.0, 10).unwrap();
        assert_eq!(rec.final_lambda, l0);
        assert_eq!(rec.rows.len(), 1);
    }

    #[test]
    fn estimators_agree_on_a_quadratic() {
        let q = make_quadratic(2, 4, 1.0, 31).unwrap();
        let o = QuadraticOracle::new(q.clone()).unwrap();
        let curvature = nalgebra::SymmetricEigen::new(o.hessian_value()).eigenvalues.max();
        let step = 0.5 / curvature;
        let mut cfg = BaselineConfig::for_constants(q.constants(), HvpOracle::Analytic);
        cfg.inner_steps = 50;
        cfg.unroll_depth = 50;
        cfg.neumann_terms = 200;
        cfg.cg_tolerance = 1e-10;
        let l0 = Vector::zeros(2);
        let w0 = Vector::zeros(4);
        let finals: Vec<Vector> = [Method::StocBio(cfg.clone()), Method::ConjugateGradient(cfg.clone()), Method::Reverse(cfg)]
            .iter()
            .map(|m| outer_descent(&q, m, &l0, &w0, 300, step, 0).unwrap().final_lambda)
            .collect();
        for a in &finals {
            for b in &finals {
                assert!((a - b).amax() < 1e-3);
            }
        }
    }

    #[test]
    fn failure_keeps_partial_record() {
        struct Broken;
        impl HypergradEstimator for Broken {
            fn name(&self) -> &'static str {
                "broken"
            }
            fn estimate(&self, _: &dyn BilevelProblem, l: &Vector, w: &Vector, call: u64) -> Result<Hypergrad> {
                let v = if call < 3 { 1.0 } else { f64::NAN };
                Ok(Hypergrad { grad: Vector::from_element(l.len(), v), inner: w.clone() })
            }
        }
        let q = QuadraticInstance::scalar_example();
        let err = outer_descent(&q, &Broken, &Vector::zeros(1), &Vector::zeros(1), 10, 0.1, 1).unwrap_err();
        assert!(matches!(err.error, Error::NonFinite { step: 3, .. }));
        assert_eq!(err.record.rows.len(), 4);
    }
}
