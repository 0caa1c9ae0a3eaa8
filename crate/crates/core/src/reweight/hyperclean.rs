use super::model::{InnerModel, ModelKind};
use super::softmax::sigmoid;
use super::Rows;
use crate::error::{ensure_len, Error, Result};
use crate::problems::{
    sample_batch, BatchHandle, BilevelProblem, Evaluation, Origin, ProblemConstants, SamplerConfig,
    SyntheticDataset, Vector,
};

/// Weight-decay constant used for hyper-cleaning.
pub const DEFAULT_HYPERCLEAN_C: f64 = 1e-3;

/// Per-example sigmoid weights over a (pooled) training set.
///
/// `L2(λ, u) = Σ_i σ(λ_i) ℓ(u; ξ_i) + c‖u‖²` and `L1(u) = Σ_j ℓ(u; ξ_j)` over
/// the validation set. Minibatch estimates draw examples uniformly and scale
/// by `n / B`.
#[derive(Debug, Clone)]
pub struct HyperCleanProblem {
    train: SyntheticDataset,
    validation: SyntheticDataset,
    model: InnerModel,
    c: f64,
    train_rows: Rows,
    val_rows: Rows,
    constants: ProblemConstants,
}

impl HyperCleanProblem {
    /// `model.ridge` is ignored; the regularizer is `c‖u‖²`.
    pub fn new(train: &SyntheticDataset, validation: &SyntheticDataset, kind: ModelKind, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument("hyper-cleaning needs c > 0".into()));
        }
        ensure_len("validation feature_dim", train.feature_dim, validation.feature_dim)?;
        let train = train.pooled()?;
        let validation = validation.pooled()?;
        let model = InnerModel::new(kind, train.feature_dim, 0.0)?;
        let train_rows = Rows::new(&train);
        let val_rows = Rows::new(&validation);
        let curvature = match kind {
            ModelKind::LinearRegression => Some(1.0),
            ModelKind::LogisticRegression => Some(0.25),
            ModelKind::Mlp1 { .. } => None,
        };
        let constants = ProblemConstants {
            mu2: 2.0 * c,
            ell10: match kind {
                ModelKind::LogisticRegression => Some(val_rows.sum_aug_norm(1)),
                _ => None,
            },
            ell11: curvature.map(|k| k * val_rows.sum_aug_norm(2)),
            ell21: curvature.map(|k| k * train_rows.sum_aug_norm(2) + 2.0 * c),
            ell22: None,
        };
        Ok(Self {
            train,
            validation,
            model,
            c,
            train_rows,
            val_rows,
            constants,
        })
    }

    /// Pooled training set; `corrupted_mask` is available for evaluation.
    pub fn train(&self) -> &SyntheticDataset {
        &self.train
    }

    pub fn validation(&self) -> &SyntheticDataset {
        &self.validation
    }

    pub fn model(&self) -> &InnerModel {
        &self.model
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn num_train(&self) -> usize {
        self.train_rows.len()
    }

    pub fn hyperclean_loss_and_grads(
        &self,
        lambda: &Vector,
        u: &Vector,
        batch: Option<&BatchHandle>,
    ) -> Result<Evaluation> {
        ensure_len("lambda", self.num_train(), lambda.len())?;
        ensure_len("u", self.model.num_params(), u.len())?;
        let mut grad_u = Vector::zeros(u.len());
        let mut grad_lambda = Vector::zeros(lambda.len());
        let mut value = 0.0;
        let mut visit = |i: usize, scale: f64| {
            let s = sigmoid(lambda[i]);
            let loss = self
                .model
                .loss_and_grad(u, self.train_rows.x(i), self.train_rows.y(i), scale * s, &mut grad_u);
            value += scale * s * loss;
            grad_lambda[i] += scale * s * (1.0 - s) * loss;
        };
        match batch {
            None => (0..self.num_train()).for_each(|i| visit(i, 1.0)),
            Some(batch) => {
                batch.expect_origin(Origin::Train)?;
                batch.validate(&self.train)?;
                let scale = self.num_train() as f64 / batch.len() as f64;
                for &(s, j) in &batch.example_refs {
                    visit(self.train_rows.flat_index(s, j), scale);
                }
            }
        }
        value += self.c * u.norm_squared();
        grad_u.axpy(2.0 * self.c, u, 1.0);
        Ok(Evaluation {
            value,
            grad_lambda,
            grad_w: grad_u,
        })
    }

    /// Fraction of validation examples classified correctly by `u`.
    pub fn validation_accuracy(&self, u: &Vector) -> f64 {
        accuracy(&self.model, u, &self.val_rows)
    }

    /// Unweighted fit `argmin_u Σ_{i∈keep} ℓ(u; ξ_i) + c‖u‖²` by damped Newton
    /// steps. Linear and logistic models only.
    pub fn refit(&self, keep: &[usize]) -> Result<Vector> {
        if let Some(&bad) = keep.iter().find(|&&i| i >= self.num_train()) {
            return Err(Error::InvalidArgument(format!("example index {bad} out of range")));
        }
        let weighted: Vec<(usize, f64)> = keep.iter().map(|&i| (i, 1.0)).collect();
        self.newton_fit(&weighted)
    }

    /// `w*(λ)` by damped Newton steps. Linear and logistic models only.
    pub fn inner_minimizer(&self, lambda: &Vector) -> Result<Vector> {
        ensure_len("lambda", self.num_train(), lambda.len())?;
        let weighted: Vec<(usize, f64)> = lambda.iter().enumerate().map(|(i, &l)| (i, sigmoid(l))).collect();
        self.newton_fit(&weighted)
    }

    /// Implicit-differentiation hypergradient with explicit Hessians at `w*(λ)`.
    /// Linear and logistic models only.
    pub fn exact_hypergrad(&self, lambda: &Vector) -> Result<Vector> {
        let u = self.inner_minimizer(lambda)?;
        let g = self.outer(lambda, &u, None)?.grad_w;
        let weighted: Vec<(usize, f64)> = lambda.iter().enumerate().map(|(i, &l)| (i, sigmoid(l))).collect();
        let v = self
            .weighted_hessian(&u, &weighted)?
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("inner Hessian".into()))?
            .solve(&g);
        let d = self.model.feature_dim;
        Ok(Vector::from_fn(self.num_train(), |i, _| {
            let x = self.train_rows.x(i);
            let s = sigmoid(lambda[i]);
            let dz = match self.model.kind {
                ModelKind::LinearRegression => self.model.score(&u, x) - self.train_rows.y(i),
                _ => sigmoid(self.model.score(&u, x)) - self.train_rows.y(i),
            };
            let xv: f64 = x.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>() + v[d];
            -s * (1.0 - s) * dz * xv
        }))
    }

    fn weighted_hessian(&self, u: &Vector, weighted: &[(usize, f64)]) -> Result<nalgebra::DMatrix<f64>> {
        let d = self.model.feature_dim;
        let mut hess = nalgebra::DMatrix::identity(d + 1, d + 1) * (2.0 * self.c);
        for &(i, weight) in weighted {
            let x = self.train_rows.x(i);
            let k = match self.model.kind {
                ModelKind::LinearRegression => 1.0,
                ModelKind::LogisticRegression => {
                    let s = sigmoid(self.model.score(u, x));
                    s * (1.0 - s)
                }
                ModelKind::Mlp1 { .. } => {
                    return Err(Error::InvalidArgument(
                        "closed-form inner solves support linear and logistic models".into(),
                    ))
                }
            };
            let xa = Vector::from_iterator(d + 1, x.iter().copied().chain(std::iter::once(1.0)));
            hess.ger(weight * k, &xa, &xa, 1.0);
        }
        Ok(hess)
    }

    fn newton_fit(&self, weighted: &[(usize, f64)]) -> Result<Vector> {
        let d = self.model.feature_dim;
        let objective = |u: &Vector, grad: &mut Vector| -> f64 {
            grad.fill(0.0);
            let mut v = self.c * u.norm_squared();
            for &(i, weight) in weighted {
                v += weight * self.model.loss_and_grad(u, self.train_rows.x(i), self.train_rows.y(i), weight, grad);
            }
            grad.axpy(2.0 * self.c, u, 1.0);
            v
        };
        let mut u = Vector::zeros(d + 1);
        self.weighted_hessian(&u, weighted)?;
        let mut grad = Vector::zeros(d + 1);
        let mut value = objective(&u, &mut grad);
        let total: f64 = weighted.iter().map(|(_, w)| w).sum();
        for _ in 0..100 {
            if grad.norm() <= 1e-10 * (1.0 + total) {
                break;
            }
            let dir = self
                .weighted_hessian(&u, weighted)?
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("inner Hessian".into()))?
                .solve(&grad);
            let mut t = 1.0;
            let mut trial_grad = Vector::zeros(d + 1);
            loop {
                let trial = &u - &dir * t;
                let v = objective(&trial, &mut trial_grad);
                if v <= value || t < 1e-8 {
                    u = trial;
                    value = v;
                    std::mem::swap(&mut grad, &mut trial_grad);
                    break;
                }
                t *= 0.5;
            }
        }
        Ok(u)
    }

    /// Per-example weights `σ(λ_i)`.
    pub fn weights(&self, lambda: &Vector) -> Vector {
        lambda.map(sigmoid)
    }
}

pub(crate) fn accuracy(model: &InnerModel, w: &Vector, rows: &Rows) -> f64 {
    let correct = (0..rows.len())
        .filter(|&i| model.predict_class(w, rows.x(i)) == rows.y(i))
        .count();
    correct as f64 / rows.len() as f64
}

impl BilevelProblem for HyperCleanProblem {
    fn dim_lambda(&self) -> usize {
        self.num_train()
    }

    fn dim_w(&self) -> usize {
        self.model.num_params()
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn outer(&self, lambda: &Vector, w: &Vector, batch: Option<&BatchHandle>) -> Result<Evaluation> {
        ensure_len("lambda", self.num_train(), lambda.len())?;
        ensure_len("u", self.model.num_params(), w.len())?;
        let mut grad_w = Vector::zeros(w.len());
        let mut value = 0.0;
        match batch {
            None => {
                for i in 0..self.val_rows.len() {
                    value += self.model.loss_and_grad(w, self.val_rows.x(i), self.val_rows.y(i), 1.0, &mut grad_w);
                }
            }
            Some(batch) => {
                batch.expect_origin(Origin::Val)?;
                batch.validate(&self.validation)?;
                let scale = self.val_rows.len() as f64 / batch.len() as f64;
                for &(s, j) in &batch.example_refs {
                    let i = self.val_rows.flat_index(s, j);
                    value += scale
                        * self
                            .model
                            .loss_and_grad(w, self.val_rows.x(i), self.val_rows.y(i), scale, &mut grad_w);
                }
            }
        }
        Ok(Evaluation {
            value,
            grad_lambda: Vector::zeros(lambda.len()),
            grad_w,
        })
    }

    fn inner(&self, lambda: &Vector, w: &Vector, batch: Option<&BatchHandle>) -> Result<Evaluation> {
        self.hyperclean_loss_and_grads(lambda, w, batch)
    }

    fn sample_batch(&self, sampler: &SamplerConfig, origin: Origin, step: u64) -> Result<Option<BatchHandle>> {
        let ds = match origin {
            Origin::Train => &self.train,
            Origin::Val => &self.validation,
        };
        sample_batch(ds, sampler, origin, step).map(Some)
    }

    fn inner_strongly_convex(&self) -> bool {
        self.model.is_convex()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{gen_sources, Generator, SourceSpec};

    fn problem() -> HyperCleanProblem {
        let gen = Generator::Logistic {
            theta: vec![2.0, -1.0, 0.5],
            bias: 0.0,
        };
        let train = gen_sources(
            &[SourceSpec {
                source_id: 0,
                n: 12,
                generator: gen.clone(),
                corruption: 0.25,
            }],
            4,
        )
        .unwrap();
        let val = gen_sources(
            &[SourceSpec {
                source_id: 1,
                n: 9,
                generator: gen,
                corruption: 0.0,
            }],
            4,
        )
        .unwrap();
        HyperCleanProblem::new(&train, &val, ModelKind::LogisticRegression, DEFAULT_HYPERCLEAN_C).unwrap()
    }

    #[test]
    fn refit_is_stationary() {
        let p = problem();
        let keep = [0, 2, 3, 5, 7, 8, 11];
        let u = p.refit(&keep).unwrap();
        // At σ = 1 on kept examples and σ ≈ 0 elsewhere the inner gradient vanishes.
        let lambda = Vector::from_fn(p.num_train(), |i, _| if keep.contains(&i) { 60.0 } else { -60.0 });
        let g = p.inner(&lambda, &u, None).unwrap().grad_w;
        assert!(g.norm() < 1e-8, "{}", g.norm());
        assert!(p.refit(&[99]).is_err());
    }

    #[test]
    fn exact_hypergrad_matches_finite_differences() {
        let p = problem();
        let lambda = Vector::from_fn(12, |i, _| (i as f64 * 0.7).cos());
        let u = p.inner_minimizer(&lambda).unwrap();
        assert!(p.inner(&lambda, &u, None).unwrap().grad_w.norm() < 1e-8);
        let value = |l: &Vector| {
            let u = p.inner_minimizer(l).unwrap();
            p.outer_value(l, &u, None).unwrap()
        };
        let g = p.exact_hypergrad(&lambda).unwrap();
        for i in 0..12 {
            let h = 1e-5;
            let mut a = lambda.clone();
            a[i] += h;
            let mut b = lambda.clone();
            b[i] -= h;
            let fd = (value(&a) - value(&b)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * g.amax().max(1.0), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn zero_lambda_gives_half_weights() {
        let p = problem();
        assert!(p.weights(&Vector::zeros(12)).iter().all(|&s| s == 0.5));
    }

    #[test]
    fn default_weight_decay() {
        assert_eq!(DEFAULT_HYPERCLEAN_C, 0.001);
        assert_eq!(problem().constants().mu2, 0.002);
    }

    #[test]
    fn lambda_gradient_restricted_to_batch() {
        let p = problem();
        let lambda = Vector::from_fn(12, |i, _| (i as f64 * 0.37).sin());
        let u = Vector::from_vec(vec![0.2, 0.1, -0.3, 0.05]);
        let batch = BatchHandle {
            example_refs: vec![(0, 2), (0, 5)],
            origin: Origin::Train,
        };
        let ev = p.inner(&lambda, &u, Some(&batch)).unwrap();
        for i in 0..12 {
            if i != 2 && i != 5 {
                assert_eq!(ev.grad_lambda[i], 0.0);
            }
        }
        assert!(ev.grad_lambda[2] > 0.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = problem();
        assert!(p.inner(&Vector::zeros(3), &Vector::zeros(4), None).is_err());
        assert!(p.inner(&Vector::zeros(12), &Vector::zeros(3), None).is_err());
    }
}
