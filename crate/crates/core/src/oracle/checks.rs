use rand::Rng;
use rand_distr::StandardNormal;

use super::{finite_diff_grad, relative_error, StepRule};
use crate::error::Result;
use crate::problems::{BilevelProblem, Vector};
use crate::rng::{keyed, Stream};

const SLACK: f64 = 1e-9;

fn gauss(rng: &mut impl Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Worst agreement between one analytic gradient and central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// `outer_lambda`, `outer_w`, `inner_lambda` or `inner_w`.
    pub name: &'static str,
    pub points: usize,
    pub max_rel_error: f64,
}

/// Compares all four partial gradients of `problem` with central differences
/// at `points` random `(λ, w)` draws of standard deviation `scale`.
pub fn gradient_check(
    problem: &dyn BilevelProblem,
    points: usize,
    scale: f64,
    seed: u64,
) -> Result<Vec<GradientCheck>> {
    let mut worst = [0.0_f64; 4];
    for k in 0..points {
        let mut rng = keyed(seed, Stream::Probe, k as u64);
        let lambda = gauss(&mut rng, problem.dim_lambda(), scale);
        let w = gauss(&mut rng, problem.dim_w(), scale);
        let outer = problem.outer(&lambda, &w, None)?;
        let inner = problem.inner(&lambda, &w, None)?;

        let l1_l = finite_diff_grad(|l| problem.outer_value(l, &w, None).unwrap_or(f64::NAN), &lambda, StepRule::Auto)?;
        let l1_w = finite_diff_grad(|x| problem.outer_value(&lambda, x, None).unwrap_or(f64::NAN), &w, StepRule::Auto)?;
        let l2_l = finite_diff_grad(|l| problem.inner_value(l, &w, None).unwrap_or(f64::NAN), &lambda, StepRule::Auto)?;
        let l2_w = finite_diff_grad(|x| problem.inner_value(&lambda, x, None).unwrap_or(f64::NAN), &w, StepRule::Auto)?;

        let errs = [
            relative_error(&outer.grad_lambda, &l1_l, 1e-6),
            relative_error(&outer.grad_w, &l1_w, 1e-6),
            relative_error(&inner.grad_lambda, &l2_l, 1e-6),
            relative_error(&inner.grad_w, &l2_w, 1e-6),
        ];
        for (acc, e) in worst.iter_mut().zip(errs) {
            *acc = if e.is_nan() { f64::INFINITY } else { acc.max(e) };
        }
    }
    Ok(["outer_lambda", "outer_w", "inner_lambda", "inner_w"]
        .into_iter()
        .zip(worst)
        .map(|(name, max_rel_error)| GradientCheck { name, points, max_rel_error })
        .collect())
}

/// Midpoint-convexity defect of `f` along a segment:
/// `f(t·a + (1−t)·b) − t·f(a) − (1−t)·f(b) + modulus·t(1−t)‖a − b‖²/2`.
/// Strong convexity with `modulus` means this is `≤ 0`.
fn convexity_defect(f: impl Fn(&Vector) -> Result<f64>, a: &Vector, b: &Vector, t: f64, modulus: f64) -> Result<f64> {
    let mid = a * t + b * (1.0 - t);
    Ok(f(&mid)? - t * f(a)? - (1.0 - t) * f(b)? + modulus * t * (1.0 - t) * (a - b).norm_squared() / 2.0)
}

/// Counts segments on which `L2(λ, ·)` violates `μ2`-strong convexity by more
/// than `1e-9`. `λ` is redrawn per segment.
pub fn strong_convexity_probe(problem: &dyn BilevelProblem, segments: usize, scale: f64, seed: u64) -> Result<usize> {
    let mu2 = problem.constants().mu2;
    let mut violations = 0;
    for k in 0..segments {
        let mut rng = keyed(seed, Stream::Probe, (1 << 32) + k as u64);
        let lambda = gauss(&mut rng, problem.dim_lambda(), scale);
        let a = gauss(&mut rng, problem.dim_w(), scale);
        let b = gauss(&mut rng, problem.dim_w(), scale);
        let t: f64 = rng.random_range(0.0..1.0);
        let defect = convexity_defect(|w| problem.inner_value(&lambda, w, None), &a, &b, t, mu2)?;
        if defect > SLACK {
            violations += 1;
        }
    }
    Ok(violations)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvexityStatus {
    Checked { violations: usize },
    Skipped(String),
}

/// Curvature of the penalized objective `L1 + α(L2(·, w) − L2(·, u))` in `u` and `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureReport {
    pub alpha: f64,
    pub trials: usize,
    /// Segments violating `μ2α`-strong concavity in `u`.
    pub concavity_violations: usize,
    /// `μ2α/2`-strong convexity in `w`; only meaningful above the α threshold.
    pub convexity: ConvexityStatus,
}

impl CurvatureReport {
    pub fn passed(&self) -> bool {
        self.concavity_violations == 0 && !matches!(self.convexity, ConvexityStatus::Checked { violations } if violations > 0)
    }
}

/// Probes strong concavity in `u` and strong convexity in `w` of the
/// penalized objective at fixed `λ` along `trials` random segments.
pub fn curvature_probe(
    problem: &dyn BilevelProblem,
    lambda: &Vector,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<CurvatureReport> {
    let constants = problem.constants();
    let mu2 = constants.mu2;
    let threshold = constants.alpha_threshold();
    let check_convexity = match threshold {
        Some(t) if alpha > t => None,
        Some(t) => Some(format!("alpha = {alpha} does not exceed 2*ell11/mu2 = {t}")),
        None => Some("ell11 unknown for this problem".to_string()),
    };
    let penalized = |w: &Vector, u: &Vector| -> Result<f64> {
        Ok(problem.outer_value(lambda, w, None)?
            + alpha * (problem.inner_value(lambda, w, None)? - problem.inner_value(lambda, u, None)?))
    };

    let dw = problem.dim_w();
    let (mut concave_bad, mut convex_bad) = (0, 0);
    for k in 0..trials {
        let mut rng = keyed(seed, Stream::Probe, (2 << 32) + k as u64);
        let anchor = gauss(&mut rng, dw, 1.0);
        let a = gauss(&mut rng, dw, 1.0);
        let b = gauss(&mut rng, dw, 1.0);
        let t: f64 = rng.random_range(0.0..1.0);
        // Concavity in u is convexity of the negation.
        let defect = convexity_defect(|u| Ok(-penalized(&anchor, u)?), &a, &b, t, mu2 * alpha)?;
        if defect > SLACK {
            concave_bad += 1;
        }
        if check_convexity.is_none() {
            let defect = convexity_defect(|w| penalized(w, &anchor), &a, &b, t, mu2 * alpha / 2.0)?;
            if defect > SLACK {
                convex_bad += 1;
            }
        }
    }
    Ok(CurvatureReport {
        alpha,
        trials,
        concavity_violations: concave_bad,
        convexity: match check_convexity {
            None => ConvexityStatus::Checked { violations: convex_bad },
            Some(reason) => ConvexityStatus::Skipped(reason),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic, QuadraticInstance};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn quadratic_gradients_agree() {
        let q = make_quadratic(3, 5, 1.0, 4).unwrap();
        for c in gradient_check(&q, 20, 1.0, 1).unwrap() {
            assert!(c.max_rel_error < 1e-5, "{c:?}");
        }
    }

    #[test]
    fn quadratic_is_strongly_convex() {
        let q = make_quadratic(3, 5, 0.8, 2).unwrap();
        assert_eq!(strong_convexity_probe(&q, 50, 1.0, 3).unwrap(), 0);
    }

    #[test]
    fn overstated_modulus_is_detected() {
        // Declared mu2 stays 1 while the actual curvature drops to 0.5.
        let q = QuadraticInstance::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            0.0,
        )
        .unwrap();
        let mut probe = q.clone();
        probe.a_matrix[(0, 0)] = 0.5;
        assert!(strong_convexity_probe(&probe, 50, 1.0, 3).unwrap() > 0);
    }

    #[test]
    fn curvature_above_threshold() {
        let q = make_quadratic(3, 5, 1.0, 6).unwrap();
        let alpha = 4.0 * q.constants().ell11.unwrap() / q.constants().mu2;
        let lambda = Vector::from_vec(vec![0.2, 0.1, -0.4]);
        let r = curvature_probe(&q, &lambda, alpha, 100, 9).unwrap();
        assert_eq!(r.concavity_violations, 0);
        assert_eq!(r.convexity, ConvexityStatus::Checked { violations: 0 });
        assert!(r.passed());
    }

    #[test]
    fn below_threshold_skips_convexity() {
        let q = make_quadratic(3, 5, 1.0, 6).unwrap();
        let lambda = Vector::zeros(3);
        for alpha in [0.01, 0.5] {
            let r = curvature_probe(&q, &lambda, alpha, 100, 9).unwrap();
            assert_eq!(r.concavity_violations, 0);
            assert!(matches!(r.convexity, ConvexityStatus::Skipped(_)));
        }
    }
}
