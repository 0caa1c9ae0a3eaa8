use std::path::Path;

use super::QuadraticOracle;
use crate::error::{Error, Result};
use crate::io::{fmt_float, write_csv};
use crate::problems::{BilevelProblem, Vector};

/// One α of a penalty-gap scan.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub alpha: f64,
    /// `|𝓛(λ) − Γ^α(λ)|`.
    pub value_gap: f64,
    /// `‖∇𝓛(λ) − ∇Γ^α(λ)‖`.
    pub grad_gap: f64,
    /// `‖w*^α(λ) − w*(λ)‖`.
    pub wdist: f64,
    /// `C0 / α`.
    pub wbound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapScan {
    pub rows: Vec<GapRow>,
    /// Fitted log-log slope of the value gap against α.
    pub value_slope: f64,
    /// Fitted log-log slope of the gradient gap against α.
    pub grad_slope: f64,
}

impl GapScan {
    pub fn header() -> Vec<String> {
        ["alpha", "value_gap", "grad_gap", "wdist", "wbound"].iter().map(|s| s.to_string()).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| [r.alpha, r.value_gap, r.grad_gap, r.wdist, r.wbound].map(fmt_float).to_vec())
            .collect();
        write_csv(path, &Self::header(), &rows)
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("slope fit needs at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope fit needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

fn c0(oracle: &QuadraticOracle) -> f64 {
    oracle.instance().constants().c0().expect("quadratic instances declare ell10")
}

/// Exact gaps between the bilevel objective and its penalized surrogate over `alphas`.
pub fn penalty_gap_scan(oracle: &QuadraticOracle, lambda: &Vector, alphas: &[f64]) -> Result<GapScan> {
    let constants = oracle.instance().constants();
    let threshold = constants.alpha_threshold().expect("quadratic instances declare ell11");
    if let Some(a) = alphas.iter().find(|a| !(**a > threshold)) {
        return Err(Error::Precondition(format!(
            "alpha = {a} violates alpha > 2*ell11/mu2 = {threshold}"
        )));
    }
    let value = oracle.value(lambda)?;
    let grad = oracle.grad_value(lambda)?;
    let w = oracle.w_star(lambda)?;
    let c0 = c0(oracle);
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        rows.push(GapRow {
            alpha,
            value_gap: (value - oracle.gamma(lambda, alpha)?).abs(),
            grad_gap: (&grad - oracle.grad_gamma(lambda, alpha)?).norm(),
            wdist: (oracle.w_star_alpha(lambda, alpha)? - &w).norm(),
            wbound: c0 / alpha,
        });
    }
    let (value_slope, grad_slope) = if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| r.alpha).collect();
        let vg: Vec<f64> = rows.iter().map(|r| r.value_gap).collect();
        let gg: Vec<f64> = rows.iter().map(|r| r.grad_gap).collect();
        (fit_loglog_slope(&xs, &vg)?, fit_loglog_slope(&xs, &gg)?)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(GapScan { rows, value_slope, grad_slope })
}

/// One α of the `w*^α` distance check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceRow {
    pub alpha: f64,
    pub distance: f64,
    /// `C0 / α` with the region-local `ℓ10`.
    pub bound: f64,
    /// `distance ≤ 1.05 · bound`.
    pub holds: bool,
}

/// Measures `‖w*^α(λ) − w*(λ)‖` against `C0/α`.
pub fn wstar_alpha_distance_check(
    oracle: &QuadraticOracle,
    lambda: &Vector,
    alphas: &[f64],
) -> Result<Vec<DistanceRow>> {
    let radius = oracle.instance().radius;
    if lambda.norm() > radius {
        return Err(Error::Precondition(format!(
            "|lambda| = {} lies outside the constant-validity radius {radius}",
            lambda.norm()
        )));
    }
    let w = oracle.w_star(lambda)?;
    let c0 = c0(oracle);
    alphas
        .iter()
        .map(|&alpha| {
            let distance = (oracle.w_star_alpha(lambda, alpha)? - &w).norm();
            let bound = c0 / alpha;
            Ok(DistanceRow { alpha, distance, bound, holds: distance <= 1.05 * bound })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic, QuadraticInstance};

    fn oracle(seed: u64) -> QuadraticOracle {
        QuadraticOracle::new(make_quadratic(3, 5, 1.0, seed).unwrap()).unwrap()
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-1.5)).collect();
        assert!((fit_loglog_slope(&xs, &ys).unwrap() + 1.5).abs() < 1e-12);
        assert!(fit_loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(fit_loglog_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn gaps_halve_per_doubling() {
        let o = oracle(5);
        let lambda = Vector::from_vec(vec![0.5, -0.3, 1.1]);
        let scan = penalty_gap_scan(&o, &lambda, &[10.0, 20.0, 40.0, 80.0]).unwrap();
        for pair in scan.rows.windows(2) {
            let rv = pair[1].value_gap / pair[0].value_gap;
            let rg = pair[1].grad_gap / pair[0].grad_gap;
            assert!((rv - 0.5).abs() <= 0.1, "value ratio {rv}");
            assert!((rg - 0.5).abs() <= 0.1, "grad ratio {rg}");
        }
        assert!((-1.15..=-0.85).contains(&scan.value_slope));
        assert!((-1.15..=-0.85).contains(&scan.grad_slope));
    }

    #[test]
    fn far_alpha_ratio() {
        let o = oracle(9);
        let lambda = Vector::from_vec(vec![1.0, 0.0, -1.0]);
        let scan = penalty_gap_scan(&o, &lambda, &[10.0, 1e6]).unwrap();
        assert!(scan.rows[1].value_gap / scan.rows[0].value_gap <= 1.1e-5);
        assert!(scan.rows[1].grad_gap / scan.rows[0].grad_gap <= 1.1e-5);
    }

    #[test]
    fn gap_nonnegative_at_minimizer() {
        let o = oracle(3);
        let ls = o.lambda_star().unwrap();
        let alpha = 10.0;
        assert!(o.value(&ls).unwrap() - o.gamma(&ls, alpha).unwrap() >= 0.0);
    }

    #[test]
    fn rejects_small_alpha() {
        let o = oracle(3);
        let lambda = Vector::zeros(3);
        // threshold = 2 * 0.5 / 1 = 1
        assert!(matches!(penalty_gap_scan(&o, &lambda, &[0.5, 10.0]), Err(Error::Precondition(_))));
    }

    #[test]
    fn scalar_distance_closed_form() {
        let o = QuadraticOracle::new(QuadraticInstance::scalar_example()).unwrap();
        let lambda = Vector::from_vec(vec![0.0]);
        let rows = wstar_alpha_distance_check(&o, &lambda, &[1.0, 10.0, 1e3]).unwrap();
        for r in &rows {
            assert!((r.distance - 1.0 / (1.0 + 2.0 * r.alpha)).abs() < 1e-15);
            assert!(r.holds);
        }
    }

    #[test]
    fn distance_bound_over_alpha_range() {
        let o = oracle(17);
        let lambda = Vector::from_vec(vec![2.0, -1.0, 0.5]);
        let rows = wstar_alpha_distance_check(&o, &lambda, &[10.0, 100.0, 1e3, 1e4]).unwrap();
        assert!(rows.iter().all(|r| r.holds && r.distance * r.alpha <= 1.05 * c0(&o)));
        assert!(rows.windows(2).all(|p| p[1].distance < p[0].distance));
    }

    #[test]
    fn distance_rejects_outside_region() {
        let o = oracle(17);
        let lambda = Vector::from_element(3, 100.0);
        assert!(wstar_alpha_distance_check(&o, &lambda, &[10.0]).is_err());
    }

    #[test]
    fn scan_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.csv");
        let o = oracle(1);
        let scan = penalty_gap_scan(&o, &Vector::zeros(3), &[10.0, 20.0]).unwrap();
        scan.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("alpha,value_gap,grad_gap,wdist,wbound\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
