use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{BatchHandle, BilevelProblem, Evaluation, ProblemConstants, Vector};
use crate::error::{ensure_len, Error, Result};
use crate::rng::{keyed, Stream};

/// Quadratic bilevel instance with closed-form solutions.
///
/// `L2(λ, w) = ½ wᵀAw − λᵀBᵀw` and `L1(λ, w) = ½‖Cw − y‖² + (ρ/2)‖λ‖²`,
/// so `w*(λ) = A⁻¹Bλ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticInstance {
    pub a_matrix: DMatrix<f64>,
    pub b_matrix: DMatrix<f64>,
    pub c_matrix: DMatrix<f64>,
    pub y_target: DVector<f64>,
    pub rho: f64,
    /// Radius of the region on which `ℓ10` is valid: `‖λ‖ ≤ R` and `‖w − w*(λ)‖ ≤ R`.
    pub radius: f64,
    constants: ProblemConstants,
}

/// Knobs for [`make_quadratic`]-style random instances.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec {
    pub dim_lambda: usize,
    pub dim_w: usize,
    pub mu2: f64,
    pub seed: u64,
    /// Largest eigenvalue of `A` is `spectrum_ratio · μ2`.
    pub spectrum_ratio: f64,
    /// `‖CᵀC‖₂ = outer_curvature · μ2`.
    pub outer_curvature: f64,
    /// Scale applied to the random `B`.
    pub coupling_scale: f64,
    pub rho: f64,
    pub radius: f64,
}

impl QuadraticSpec {
    pub fn new(dim_lambda: usize, dim_w: usize, mu2: f64, seed: u64) -> Self {
        Self {
            dim_lambda,
            dim_w,
            mu2,
            seed,
            spectrum_ratio: 4.0,
            outer_curvature: 0.5,
            coupling_scale: 1.0,
            rho: 0.1,
            radius: 10.0,
        }
    }

    pub fn build(&self) -> Result<QuadraticInstance> {
        if self.dim_lambda == 0 || self.dim_w == 0 {
            return Err(Error::InvalidArgument("dimensions must be at least 1".into()));
        }
        if !(self.mu2 > 0.0) || !self.mu2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "mu2_target must be positive, got {}",
                self.mu2
            )));
        }
        if !(self.spectrum_ratio >= 1.0) || !(self.outer_curvature > 0.0) || self.rho < 0.0 {
            return Err(Error::InvalidArgument("invalid spectrum parameters".into()));
        }
        let (dl, dw) = (self.dim_lambda, self.dim_w);
        let mut rng = keyed(self.seed, Stream::Instance, 0);
        let mut gauss = |r: usize, c: usize| -> DMatrix<f64> {
            DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
        };

        let q = gauss(dw, dw).qr().q();
        let eigs = DVector::from_fn(dw, |i, _| {
            if dw == 1 {
                self.mu2
            } else {
                self.mu2 * (1.0 + (self.spectrum_ratio - 1.0) * i as f64 / (dw - 1) as f64)
            }
        });
        let mut a = &q * DMatrix::from_diagonal(&eigs) * q.transpose();
        a = (&a + a.transpose()) * 0.5;
        if dw == 1 {
            a[(0, 0)] = self.mu2;
        }

        let b = gauss(dw, dl) * self.coupling_scale;
        let mut c = gauss(dw, dw);
        let ctc_norm = spectral_norm_sym(&(c.transpose() * &c));
        c *= (self.outer_curvature * self.mu2 / ctc_norm).sqrt();
        let y = gauss(dw, 1).column(0).into_owned();

        QuadraticInstance::with_radius(a, b, c, y, self.rho, self.radius)
    }
}

/// Random quadratic instance whose `A` has smallest eigenvalue `mu2_target`.
pub fn make_quadratic(
    dim_lambda: usize,
    dim_w: usize,
    mu2_target: f64,
    seed: u64,
) -> Result<QuadraticInstance> {
    QuadraticSpec::new(dim_lambda, dim_w, mu2_target, seed).build()
}

fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    spectral_norm_sym(&(m.transpose() * m)).sqrt()
}

impl QuadraticInstance {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        y: DVector<f64>,
        rho: f64,
    ) -> Result<Self> {
        Self::with_radius(a, b, c, y, rho, 10.0)
    }

    pub fn with_radius(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        y: DVector<f64>,
        rho: f64,
        radius: f64,
    ) -> Result<Self> {
        let dw = a.nrows();
        ensure_len("A columns", dw, a.ncols())?;
        ensure_len("B rows", dw, b.nrows())?;
        ensure_len("C columns", dw, c.ncols())?;
        ensure_len("y length", c.nrows(), y.len())?;
        if b.ncols() == 0 || dw == 0 {
            return Err(Error::InvalidArgument("dimensions must be at least 1".into()));
        }
        if rho < 0.0 || !(radius > 0.0) {
            return Err(Error::InvalidArgument("rho must be >= 0 and radius > 0".into()));
        }
        let asym = (&a - a.transpose()).amax();
        if asym > 1e-12 * a.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite("A is not symmetric".into()));
        }
        let eig = SymmetricEigen::new(a.clone());
        let mu2 = eig.eigenvalues.min();
        if !(mu2 > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "smallest eigenvalue of A is {mu2}"
            )));
        }

        let ctc = c.transpose() * &c;
        let ctc_norm = spectral_norm_sym(&ctc);
        let chol = a.clone().cholesky().ok_or_else(|| {
            Error::NotPositiveDefinite("Cholesky factorization of A failed".into())
        })?;
        let response = chol.solve(&b);
        let ell10 = ctc_norm * (spectral_norm(&response) + 1.0) * radius + (c.transpose() * &y).norm();

        let (dl, n) = (b.ncols(), dw + b.ncols());
        let mut joint = DMatrix::zeros(n, n);
        joint.view_mut((dl, dl), (dw, dw)).copy_from(&a);
        joint.view_mut((dl, 0), (dw, dl)).copy_from(&(-&b));
        joint.view_mut((0, dl), (dl, dw)).copy_from(&(-b.transpose()));
        let ell21 = spectral_norm_sym(&joint);

        let constants = ProblemConstants {
            mu2,
            ell10: Some(ell10),
            ell11: Some(ctc_norm.max(rho)),
            ell21: Some(ell21),
            ell22: Some(0.0),
        };
        Ok(Self {
            a_matrix: a,
            b_matrix: b,
            c_matrix: c,
            y_target: y,
            rho,
            radius,
            constants,
        })
    }

    /// The 1-D instance `A = 2, B = 1, C = 1, y = 1, ρ = 0`.
    pub fn scalar_example() -> Self {
        Self::new(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            0.0,
        )
        .expect("scalar example is positive definite")
    }

    fn check(&self, lambda: &Vector, w: &Vector) -> Result<()> {
        ensure_len("lambda", self.dim_lambda(), lambda.len())?;
        ensure_len("w", self.dim_w(), w.len())
    }
}

impl BilevelProblem for QuadraticInstance {
    fn dim_lambda(&self) -> usize {
        self.b_matrix.ncols()
    }

    fn dim_w(&self) -> usize {
        self.a_matrix.nrows()
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn outer(&self, lambda: &Vector, w: &Vector, _batch: Option<&BatchHandle>) -> Result<Evaluation> {
        self.check(lambda, w)?;
        let residual = &self.c_matrix * w - &self.y_target;
        Ok(Evaluation {
            value: 0.5 * residual.norm_squared() + 0.5 * self.rho * lambda.norm_squared(),
            grad_lambda: lambda * self.rho,
            grad_w: self.c_matrix.transpose() * residual,
        })
    }

    fn inner(&self, lambda: &Vector, w: &Vector, _batch: Option<&BatchHandle>) -> Result<Evaluation> {
        self.check(lambda, w)?;
        let aw = &self.a_matrix * w;
        let bl = &self.b_matrix * lambda;
        Ok(Evaluation {
            value: 0.5 * w.dot(&aw) - bl.dot(w),
            grad_lambda: -(self.b_matrix.transpose() * w),
            grad_w: aw - bl,
        })
    }

    fn inner_hvp_ww(&self, _lambda: &Vector, _w: &Vector, v: &Vector) -> Option<Vector> {
        Some(&self.a_matrix * v)
    }

    fn inner_hvp_lw(&self, _lambda: &Vector, _w: &Vector, v: &Vector) -> Option<Vector> {
        Some(-(self.b_matrix.transpose() * v))
    }
}
