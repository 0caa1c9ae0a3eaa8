use crate::error::{Error, Result};
use crate::problems::Vector;

/// Step selection for central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `h_i = max(1, |x_i|) · ε^{1/3}`.
    Auto,
    /// `h_i = max(1, |x_i|) · base`.
    Scaled(f64),
    /// Same `h` for every coordinate.
    Fixed(f64),
}

impl StepRule {
    fn step(self, xi: f64) -> f64 {
        match self {
            StepRule::Auto => xi.abs().max(1.0) * f64::EPSILON.cbrt(),
            StepRule::Scaled(base) => xi.abs().max(1.0) * base,
            StepRule::Fixed(h) => h,
        }
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad(f: impl Fn(&Vector) -> f64, x: &Vector, rule: StepRule) -> Result<Vector> {
    let mut probe = x.clone();
    let mut grad = Vector::zeros(x.len());
    for i in 0..x.len() {
        let h = rule.step(x[i]);
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
        }
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                what: format!("finite-difference evaluation along coordinate {i}"),
                step: 0,
            });
        }
        // Divide by the realized step, which may differ from h after rounding.
        grad[i] = (plus - minus) / ((x[i] + h) - (x[i] - h));
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &Vector, b: &Vector, floor: f64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_squared_norm() {
        let x = Vector::from_vec(vec![3.0, 4.0]);
        let g = finite_diff_grad(|v| 0.5 * v.norm_squared(), &x, StepRule::Auto).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-7 && (g[1] - 4.0).abs() < 1e-7);
    }

    #[test]
    fn constant_function() {
        let x = Vector::from_vec(vec![1.0, -2.0, 0.0]);
        let g = finite_diff_grad(|_| 7.5, &x, StepRule::Auto).unwrap();
        assert_eq!(g, Vector::zeros(3));
    }

    #[test]
    fn non_finite_rejected() {
        let x = Vector::from_vec(vec![0.0]);
        assert!(finite_diff_grad(|v| 1.0 / v[0].abs().min(0.0), &x, StepRule::Auto).is_err());
        assert!(finite_diff_grad(|v| v[0], &x, StepRule::Fixed(0.0)).is_err());
    }
}
