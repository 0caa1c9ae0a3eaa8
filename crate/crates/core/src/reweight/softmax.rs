use super::super::problems::Vector;
use crate::error::{ensure_len, Error, Result};

/// Outer variable `λ` together with its softmax image `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights {
    pub lambda: Vector,
    pub p: Vector,
}

impl MixtureWeights {
    pub fn new(lambda: Vector) -> Result<Self> {
        let p = softmax(&lambda)?;
        Ok(Self { lambda, p })
    }

    pub fn uniform(m: usize) -> Self {
        Self::new(Vector::zeros(m)).expect("zeros are finite")
    }
}

/// Max-subtracted softmax.
pub fn softmax(lambda: &Vector) -> Result<Vector> {
    if lambda.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    if lambda.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("softmax input contains NaN or infinity".into()));
    }
    let max = lambda.max();
    let e = lambda.map(|v| (v - max).exp());
    let total = e.sum();
    Ok(e / total)
}

/// `Jᵀg` for the softmax Jacobian `J_ij = p_i(δ_ij − p_j)`.
pub fn softmax_jacobian_apply(p: &Vector, g: &Vector) -> Result<Vector> {
    ensure_len("softmax jacobian", p.len(), g.len())?;
    let mean = p.dot(g);
    Ok(p.zip_map(g, |pi, gi| pi * (gi - mean)))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn symmetric_input_is_uniform() {
        let p = softmax(&v(&[0.0, 0.0, 0.0])).unwrap();
        for &pi in p.iter() {
            assert!((pi - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn log_two_gives_two_thirds() {
        let p = softmax(&v(&[2f64.ln(), 0.0])).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn large_inputs_do_not_overflow() {
        let p = softmax(&v(&[1000.0, 0.0])).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(softmax(&v(&[f64::NAN, 0.0])).is_err());
        assert!(softmax(&v(&[f64::INFINITY, 0.0])).is_err());
    }

    #[test]
    fn jacobian_of_constant_is_zero() {
        let p = v(&[0.25; 4]);
        let out = softmax_jacobian_apply(&p, &v(&[3.0; 4])).unwrap();
        assert!(out.amax() < 1e-15);
    }

    #[test]
    fn jacobian_hand_example() {
        let out = softmax_jacobian_apply(&v(&[2.0 / 3.0, 1.0 / 3.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((out[0] - 2.0 / 9.0).abs() < 1e-15);
        assert!((out[1] + 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn jacobian_dimension_mismatch() {
        assert!(softmax_jacobian_apply(&v(&[0.5, 0.5]), &v(&[1.0])).is_err());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        // d/dλ of p(λ)ᵀg against the closed form.
        let lambda = v(&[0.3, -1.1, 0.8, 0.05]);
        let g = v(&[1.5, -0.4, 2.2, 0.7]);
        let p = softmax(&lambda).unwrap();
        let analytic = softmax_jacobian_apply(&p, &g).unwrap();
        let h = f64::EPSILON.cbrt();
        for j in 0..4 {
            let mut plus = lambda.clone();
            plus[j] += h;
            let mut minus = lambda.clone();
            minus[j] -= h;
            let fd = (softmax(&plus).unwrap().dot(&g) - softmax(&minus).unwrap().dot(&g)) / (2.0 * h);
            assert!((fd - analytic[j]).abs() <= 1e-6 * analytic[j].abs().max(1e-3));
        }
    }

    proptest! {
        #[test]
        fn sums_to_one_and_shift_invariant(
            xs in proptest::collection::vec(-30.0f64..30.0, 1..8),
            c in -20.0f64..20.0,
        ) {
            let lambda = Vector::from_vec(xs);
            let p = softmax(&lambda).unwrap();
            prop_assert!((p.sum() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            let shifted = softmax(&lambda.add_scalar(c)).unwrap();
            prop_assert!((shifted - &p).amax() < 1e-14);
        }

        #[test]
        fn jacobian_output_sums_to_zero(
            xs in proptest::collection::vec(-5.0f64..5.0, 2..8),
            seed in 0u64..1000,
        ) {
            let lambda = Vector::from_vec(xs);
            let p = softmax(&lambda).unwrap();
            let g = Vector::from_fn(p.len(), |i, _| ((i as f64 + 1.0) * (seed as f64 + 0.5)).sin() * 3.0);
            let out = softmax_jacobian_apply(&p, &g).unwrap();
            prop_assert!(out.sum().abs() < 1e-12);
        }
    }
}
