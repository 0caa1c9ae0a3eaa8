use std::sync::Mutex;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{ensure_len, Error, Result};
use crate::problems::{BilevelProblem, QuadraticInstance, Vector};

type Factor = Cholesky<f64, Dyn>;

/// Closed forms of the penalized quantities on a quadratic instance.
///
/// With `M = A⁻¹B`: `w*(λ) = u*(λ) = Mλ`, `w*^α(λ) = (CᵀC + αA)⁻¹(Cᵀy + αBλ)`,
/// `𝓛(λ) = L1(λ, w*(λ))` and
/// `Γ^α(λ) = L1(λ, w*^α) + α(L2(λ, w*^α) − L2(λ, u*))`.
#[derive(Debug)]
pub struct QuadraticOracle {
    instance: QuadraticInstance,
    response: DMatrix<f64>,
    ctc: DMatrix<f64>,
    cty: DVector<f64>,
    penalized: Mutex<Vec<(u64, Factor)>>,
}

impl QuadraticOracle {
    pub fn new(instance: QuadraticInstance) -> Result<Self> {
        let a_factor = instance
            .a_matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("A is singular".into()))?;
        let response = a_factor.solve(&instance.b_matrix);
        let ctc = instance.c_matrix.transpose() * &instance.c_matrix;
        let cty = instance.c_matrix.transpose() * &instance.y_target;
        Ok(Self {
            instance,
            response,
            ctc,
            cty,
            penalized: Mutex::new(Vec::new()),
        })
    }

    pub fn instance(&self) -> &QuadraticInstance {
        &self.instance
    }

    fn check(&self, lambda: &Vector) -> Result<()> {
        ensure_len("lambda", self.instance.dim_lambda(), lambda.len())
    }

    fn penalized_factor(&self, alpha: f64) -> Result<Factor> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        let key = alpha.to_bits();
        let mut cache = self.penalized.lock().expect("factor cache poisoned");
        if let Some((_, f)) = cache.iter().find(|(k, _)| *k == key) {
            return Ok(f.clone());
        }
        let m = &self.ctc + &self.instance.a_matrix * alpha;
        let f = m
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("CᵀC + αA is singular".into()))?;
        cache.push((key, f.clone()));
        Ok(f)
    }

    /// `∂w*/∂λ = A⁻¹B`.
    pub fn response(&self) -> &DMatrix<f64> {
        &self.response
    }

    pub fn w_star(&self, lambda: &Vector) -> Result<Vector> {
        self.check(lambda)?;
        Ok(&self.response * lambda)
    }

    /// Maximizer of the penalized objective in `u`; equals `w*(λ)`.
    pub fn u_star(&self, lambda: &Vector) -> Result<Vector> {
        self.w_star(lambda)
    }

    pub fn w_star_alpha(&self, lambda: &Vector, alpha: f64) -> Result<Vector> {
        self.check(lambda)?;
        let f = self.penalized_factor(alpha)?;
        Ok(f.solve(&(&self.cty + &self.instance.b_matrix * lambda * alpha)))
    }

    /// `𝓛^α(λ, w, u) = L1(λ, w) + α(L2(λ, w) − L2(λ, u))`.
    pub fn penalized(&self, lambda: &Vector, w: &Vector, u: &Vector, alpha: f64) -> Result<f64> {
        let q = &self.instance;
        Ok(q.outer_value(lambda, w, None)? + alpha * (q.inner_value(lambda, w, None)? - q.inner_value(lambda, u, None)?))
    }

    /// Partial `λ`-gradient of `𝓛^α`.
    pub fn penalized_grad_lambda(&self, lambda: &Vector, w: &Vector, u: &Vector, alpha: f64) -> Result<Vector> {
        let q = &self.instance;
        let outer = q.outer(lambda, w, None)?.grad_lambda;
        let at_w = q.inner(lambda, w, None)?.grad_lambda;
        let at_u = q.inner(lambda, u, None)?.grad_lambda;
        Ok(outer + (at_w - at_u) * alpha)
    }

    /// `𝓛(λ)`.
    pub fn value(&self, lambda: &Vector) -> Result<f64> {
        let w = self.w_star(lambda)?;
        self.instance.outer_value(lambda, &w, None)
    }

    /// `Γ^α(λ)`.
    pub fn gamma(&self, lambda: &Vector, alpha: f64) -> Result<f64> {
        let w = self.w_star_alpha(lambda, alpha)?;
        let u = self.u_star(lambda)?;
        self.penalized(lambda, &w, &u, alpha)
    }

    /// `∇𝓛(λ) = ρλ + (A⁻¹B)ᵀ Cᵀ(Cw* − y)`.
    pub fn grad_value(&self, lambda: &Vector) -> Result<Vector> {
        let w = self.w_star(lambda)?;
        let ev = self.instance.outer(lambda, &w, None)?;
        Ok(ev.grad_lambda + self.response.transpose() * ev.grad_w)
    }

    /// `∇Γ^α(λ) = ρλ − αBᵀ(w*^α − w*)`.
    pub fn grad_gamma(&self, lambda: &Vector, alpha: f64) -> Result<Vector> {
        let wa = self.w_star_alpha(lambda, alpha)?;
        let w = self.w_star(lambda)?;
        Ok(lambda * self.instance.rho - self.instance.b_matrix.transpose() * (wa - w) * alpha)
    }

    /// `∇²𝓛 = ρI + MᵀCᵀCM`.
    pub fn hessian_value(&self) -> DMatrix<f64> {
        let dl = self.instance.dim_lambda();
        DMatrix::identity(dl, dl) * self.instance.rho + self.response.transpose() * &self.ctc * &self.response
    }

    /// `∇²Γ^α = ρI − αBᵀ(α(CᵀC + αA)⁻¹B − A⁻¹B)`.
    pub fn hessian_gamma(&self, alpha: f64) -> Result<DMatrix<f64>> {
        let f = self.penalized_factor(alpha)?;
        let b = &self.instance.b_matrix;
        let dl = self.instance.dim_lambda();
        let n_alpha = f.solve(b) * alpha;
        Ok(DMatrix::identity(dl, dl) * self.instance.rho - b.transpose() * (n_alpha - &self.response) * alpha)
    }

    /// Minimizer of `𝓛`.
    pub fn lambda_star(&self) -> Result<Vector> {
        let h = self.hessian_value();
        let rhs = self.response.transpose() * &self.cty;
        h.cholesky()
            .map(|f| f.solve(&rhs))
            .ok_or_else(|| Error::NotPositiveDefinite("∇²𝓛 is singular".into()))
    }
}

/// Exact hypergradient `∂𝓛/∂λ = ∇_λL1 + (∂w*/∂λ)ᵀ∇_wL1` on a quadratic.
pub fn ift_hypergrad(oracle: &QuadraticOracle, lambda: &Vector) -> Result<Vector> {
    oracle.grad_value(lambda)
}
