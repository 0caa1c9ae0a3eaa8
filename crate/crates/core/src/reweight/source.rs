use super::model::{InnerModel, ModelKind};
use super::softmax::{softmax, softmax_jacobian_apply};
use super::Rows;
use crate::error::{ensure_len, Error, Result};
use crate::problems::{
    sample_batch, BatchHandle, BilevelProblem, Evaluation, Origin, ProblemConstants, SamplerConfig,
    SyntheticDataset, Vector,
};

/// Softmax-weighted mixture over `m` training sources.
///
/// `L2(λ, w) = Σ_i p_i(λ)/n_i Σ_j ℓ(w; a_j^i) + (c_ridge/2)‖w‖²` and
/// `L1(w)` is the mean validation loss, so `∇_λ L1 ≡ 0`.
///
/// Minibatches pick a source uniformly and then an example within it; each
/// drawn example is scaled by `m · p_s` so the batch value is unbiased for
/// the full-batch objective.
#[derive(Debug, Clone)]
pub struct SourceReweightProblem {
    train: SyntheticDataset,
    validation: SyntheticDataset,
    model: InnerModel,
    train_rows: Rows,
    val_rows: Rows,
    constants: ProblemConstants,
}

impl SourceReweightProblem {
    pub fn new(train: SyntheticDataset, validation: SyntheticDataset, model: InnerModel) -> Result<Self> {
        ensure_len("validation feature_dim", train.feature_dim, validation.feature_dim)?;
        ensure_len("model feature_dim", train.feature_dim, model.feature_dim)?;
        if !(model.ridge > 0.0) {
            return Err(Error::InvalidArgument("source reweighting needs c_ridge > 0".into()));
        }
        let train_rows = Rows::new(&train);
        let val_rows = Rows::new(&validation);
        let curvature = match model.kind {
            ModelKind::LinearRegression => Some(1.0),
            ModelKind::LogisticRegression => Some(0.25),
            ModelKind::Mlp1 { .. } => None,
        };
        let ell10 = match model.kind {
            ModelKind::LogisticRegression => Some(val_rows.max_aug_norm_sq().sqrt()),
            _ => None,
        };
        let constants = ProblemConstants {
            mu2: model.ridge,
            ell10,
            ell11: curvature.map(|c| c * val_rows.max_aug_norm_sq()),
            ell21: curvature.map(|c| c * train_rows.max_aug_norm_sq() + model.ridge),
            ell22: None,
        };
        Ok(Self {
            train,
            validation,
            model,
            train_rows,
            val_rows,
            constants,
        })
    }

    pub fn train(&self) -> &SyntheticDataset {
        &self.train
    }

    pub fn validation(&self) -> &SyntheticDataset {
        &self.validation
    }

    pub fn model(&self) -> &InnerModel {
        &self.model
    }

    pub fn num_sources(&self) -> usize {
        self.train.num_sources()
    }

    /// Value and gradients of the weighted training loss. Same as
    /// [`BilevelProblem::inner`]; named for the operation it performs.
    pub fn weighted_train_loss_and_grads(
        &self,
        lambda: &Vector,
        w: &Vector,
        batch: Option<&BatchHandle>,
    ) -> Result<Evaluation> {
        ensure_len("lambda", self.num_sources(), lambda.len())?;
        ensure_len("w", self.model.num_params(), w.len())?;
        let p = softmax(lambda)?;
        let m = self.num_sources();
        let mut grad_w = Vector::zeros(w.len());
        let mut grad_p = Vector::zeros(m);
        let mut value = 0.0;
        match batch {
            None => {
                for s in 0..m {
                    let range = self.train_rows.source_range(s);
                    let n = range.len() as f64;
                    let mut total = 0.0;
                    for i in range {
                        total += self.model.loss_and_grad(
                            w,
                            self.train_rows.x(i),
                            self.train_rows.y(i),
                            p[s] / n,
                            &mut grad_w,
                        );
                    }
                    grad_p[s] = total / n;
                    value += p[s] * grad_p[s];
                }
            }
            Some(batch) => {
                batch.expect_origin(Origin::Train)?;
                batch.validate(&self.train)?;
                let b = batch.len() as f64;
                for &(s, j) in &batch.example_refs {
                    let i = self.train_rows.flat_index(s, j);
                    let weight = m as f64 * p[s] / b;
                    let loss =
                        self.model
                            .loss_and_grad(w, self.train_rows.x(i), self.train_rows.y(i), weight, &mut grad_w);
                    value += weight * loss;
                    grad_p[s] += m as f64 * loss / b;
                }
            }
        }
        value += 0.5 * self.model.ridge * w.norm_squared();
        grad_w.axpy(self.model.ridge, w, 1.0);
        Ok(Evaluation {
            value,
            grad_lambda: softmax_jacobian_apply(&p, &grad_p)?,
            grad_w,
        })
    }

    /// Mean validation loss and its gradient in `w`.
    pub fn validation_loss_and_grad(&self, w: &Vector, batch: Option<&BatchHandle>) -> Result<(f64, Vector)> {
        ensure_len("w", self.model.num_params(), w.len())?;
        let mut grad = Vector::zeros(w.len());
        let mut value = 0.0;
        match batch {
            None => {
                let n = self.val_rows.len() as f64;
                for i in 0..self.val_rows.len() {
                    value += self.model.loss_and_grad(w, self.val_rows.x(i), self.val_rows.y(i), 1.0 / n, &mut grad) / n;
                }
            }
            Some(batch) => {
                batch.expect_origin(Origin::Val)?;
                batch.validate(&self.validation)?;
                let b = batch.len() as f64;
                for &(s, j) in &batch.example_refs {
                    let i = self.val_rows.flat_index(s, j);
                    value += self.model.loss_and_grad(w, self.val_rows.x(i), self.val_rows.y(i), 1.0 / b, &mut grad) / b;
                }
            }
        }
        Ok((value, grad))
    }
}

impl BilevelProblem for SourceReweightProblem {
    fn dim_lambda(&self) -> usize {
        self.num_sources()
    }

    fn dim_w(&self) -> usize {
        self.model.num_params()
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn outer(&self, lambda: &Vector, w: &Vector, batch: Option<&BatchHandle>) -> Result<Evaluation> {
        ensure_len("lambda", self.num_sources(), lambda.len())?;
        let (value, grad_w) = self.validation_loss_and_grad(w, batch)?;
        Ok(Evaluation {
            value,
            grad_lambda: Vector::zeros(lambda.len()),
            grad_w,
        })
    }

    fn inner(&self, lambda: &Vector, w: &Vector, batch: Option<&BatchHandle>) -> Result<Evaluation> {
        self.weighted_train_loss_and_grads(lambda, w, batch)
    }

    fn sample_batch(&self, sampler: &SamplerConfig, origin: Origin, step: u64) -> Result<Option<BatchHandle>> {
        let ds = match origin {
            Origin::Train => &self.train,
            Origin::Val => &self.validation,
        };
        sample_batch(ds, sampler, origin, step).map(Some)
    }

    fn mixture_weights(&self, lambda: &Vector) -> Option<Vector> {
        softmax(lambda).ok()
    }

    fn inner_strongly_convex(&self) -> bool {
        self.model.is_convex()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{gen_sources, Generator, SourceSpec};

    fn toy(m_sizes: &[usize], kind: ModelKind) -> SourceReweightProblem {
        let gen = |i: usize| Generator::Logistic {
            theta: vec![1.0 + i as f64, -0.5],
            bias: 0.2,
        };
        let specs: Vec<SourceSpec> = m_sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| SourceSpec {
                source_id: i as u64,
                n,
                generator: gen(i),
                corruption: if i == 1 { 0.5 } else { 0.0 },
            })
            .collect();
        let train = gen_sources(&specs, 1).unwrap();
        let val = gen_sources(
            &[SourceSpec {
                source_id: 50,
                n: 7,
                generator: gen(0),
                corruption: 0.0,
            }],
            1,
        )
        .unwrap();
        SourceReweightProblem::new(train, val, InnerModel::new(kind, 2, 1e-3).unwrap()).unwrap()
    }

    #[test]
    fn single_source_is_plain_mean() {
        let prob = toy(&[6], ModelKind::LogisticRegression);
        let w = Vector::from_vec(vec![0.3, -0.2, 0.1]);
        let lambda = Vector::from_vec(vec![0.7]);
        let batch = BatchHandle {
            example_refs: vec![(0, 1), (0, 4), (0, 4)],
            origin: Origin::Train,
        };
        let ev = prob.inner(&lambda, &w, Some(&batch)).unwrap();
        let rows = &prob.train_rows;
        let mean = [1, 4, 4].iter().map(|&i| prob.model.loss(&w, rows.x(i), rows.y(i))).sum::<f64>() / 3.0;
        let expected = mean + 0.5 * 1e-3 * w.norm_squared();
        assert!((ev.value - expected).abs() < 1e-14);
        assert_eq!(ev.grad_lambda, Vector::zeros(1));
    }

    #[test]
    fn full_batch_matches_double_loop() {
        let prob = toy(&[4, 6], ModelKind::LogisticRegression);
        let w = Vector::from_vec(vec![0.5, 0.25, -0.4]);
        let lambda = Vector::from_vec(vec![0.3, -0.6]);
        let ev = prob.inner(&lambda, &w, None).unwrap();

        // Literal Σ_i p_i/n_i Σ_j ℓ + ridge, with softmax and losses recomputed by hand.
        let e0 = 0.3f64.exp();
        let e1 = (-0.6f64).exp();
        let p = [e0 / (e0 + e1), e1 / (e0 + e1)];
        let mut value = 0.0;
        let mut src_mean = [0.0; 2];
        let mut grad_w = [0.0; 3];
        for s in 0..2 {
            let src = &prob.train.sources[s];
            let n = src.len() as f64;
            for j in 0..src.len() {
                let x = [src.features[(j, 0)], src.features[(j, 1)]];
                let z = w[0] * x[0] + w[1] * x[1] + w[2];
                let y = src.labels[j];
                let loss = (1.0 + z.exp()).ln() - y * z;
                let dz = 1.0 / (1.0 + (-z).exp()) - y;
                value += p[s] / n * loss;
                src_mean[s] += loss / n;
                grad_w[0] += p[s] / n * dz * x[0];
                grad_w[1] += p[s] / n * dz * x[1];
                grad_w[2] += p[s] / n * dz;
            }
        }
        value += 0.5e-3 * w.norm_squared();
        for k in 0..3 {
            grad_w[k] += 1e-3 * w[k];
        }
        let pg = p[0] * src_mean[0] + p[1] * src_mean[1];
        let grad_l = [p[0] * (src_mean[0] - pg), p[1] * (src_mean[1] - pg)];
        assert!((ev.value - value).abs() < 1e-12);
        for k in 0..3 {
            assert!((ev.grad_w[k] - grad_w[k]).abs() < 1e-12);
        }
        for k in 0..2 {
            assert!((ev.grad_lambda[k] - grad_l[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn minibatch_mean_is_unbiased() {
        let prob = toy(&[4, 6], ModelKind::LogisticRegression);
        let w = Vector::from_vec(vec![0.5, 0.25, -0.4]);
        let lambda = Vector::from_vec(vec![0.3, -0.6]);
        let full = prob.inner(&lambda, &w, None).unwrap().value;
        let cfg = SamplerConfig::new(4, 4, 77);
        let draws: Vec<f64> = (0..10_000)
            .map(|k| {
                let b = prob.sample_batch(&cfg, Origin::Train, k).unwrap().unwrap();
                prob.inner(&lambda, &w, Some(&b)).unwrap().value
            })
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((mean - full).abs() <= 3.0 * se, "mean {mean} full {full} se {se}");
    }

    #[test]
    fn wrong_origin_rejected() {
        let prob = toy(&[4, 6], ModelKind::LogisticRegression);
        let w = Vector::zeros(3);
        let lambda = Vector::zeros(2);
        let val_batch = BatchHandle {
            example_refs: vec![(0, 0)],
            origin: Origin::Val,
        };
        assert!(prob.inner(&lambda, &w, Some(&val_batch)).is_err());
        let train_batch = BatchHandle {
            example_refs: vec![(0, 0)],
            origin: Origin::Train,
        };
        assert!(prob.outer(&lambda, &w, Some(&train_batch)).is_err());
    }

    #[test]
    fn outer_has_no_lambda_gradient() {
        let prob = toy(&[4, 6], ModelKind::Mlp1 { hidden: 3 });
        let w = prob.model.init_params(5);
        let ev = prob.outer(&Vector::from_vec(vec![1.0, -2.0]), &w, None).unwrap();
        assert_eq!(ev.grad_lambda, Vector::zeros(2));
        assert!(!prob.inner_strongly_convex());
    }
}
