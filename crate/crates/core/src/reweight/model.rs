use rand::Rng;
use rand_distr::StandardNormal;

use super::softmax::sigmoid;
use crate::error::{Error, Result};
use crate::problems::Vector;
use crate::rng::{keyed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Squared loss `½(θᵀx + b − y)²`.
    LinearRegression,
    /// Binary cross-entropy on `sigmoid(θᵀx + b)`.
    LogisticRegression,
    /// One tanh hidden layer with a logistic output; binary labels.
    Mlp1 { hidden: usize },
}

/// Per-example model and loss. Parameters live in a flat vector.
///
/// Linear kinds use `[θ, b]`. `Mlp1` uses `[W1 (row-major, hidden × d), b1, w2, b2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerModel {
    pub kind: ModelKind,
    pub feature_dim: usize,
    /// Ridge coefficient `c_ridge`; the source-reweighting objective adds `(c_ridge/2)‖w‖²`.
    pub ridge: f64,
}

pub const DEFAULT_HIDDEN: usize = 8;
pub const DEFAULT_RIDGE: f64 = 1e-3;

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl InnerModel {
    pub fn new(kind: ModelKind, feature_dim: usize, ridge: f64) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidArgument("feature_dim must be positive".into()));
        }
        if !(ridge >= 0.0) {
            return Err(Error::InvalidArgument("ridge must be nonnegative".into()));
        }
        if let ModelKind::Mlp1 { hidden: 0 } = kind {
            return Err(Error::InvalidArgument("mlp1 needs at least one hidden unit".into()));
        }
        Ok(Self {
            kind,
            feature_dim,
            ridge,
        })
    }

    pub fn num_params(&self) -> usize {
        let d = self.feature_dim;
        match self.kind {
            ModelKind::LinearRegression | ModelKind::LogisticRegression => d + 1,
            ModelKind::Mlp1 { hidden } => hidden * d + 2 * hidden + 1,
        }
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self.kind, ModelKind::Mlp1 { .. })
    }

    /// Seeded `N(0, 0.1²)` initialization.
    pub fn init_params(&self, seed: u64) -> Vector {
        let mut rng = keyed(seed, Stream::Init, 0);
        Vector::from_fn(self.num_params(), |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal))
    }

    /// Pre-activation output `z(x)`.
    pub fn score(&self, w: &Vector, x: &[f64]) -> f64 {
        let d = self.feature_dim;
        match self.kind {
            ModelKind::LinearRegression | ModelKind::LogisticRegression => {
                w.as_slice()[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[d]
            }
            ModelKind::Mlp1 { hidden } => {
                let p = w.as_slice();
                let (w1, rest) = p.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                let mut z = b2[0];
                for h in 0..hidden {
                    let a: f64 = w1[h * d..(h + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b1[h];
                    z += w2[h] * a.tanh();
                }
                z
            }
        }
    }

    fn loss_from_score(&self, z: f64, y: f64) -> (f64, f64) {
        match self.kind {
            ModelKind::LinearRegression => {
                let r = z - y;
                (0.5 * r * r, r)
            }
            ModelKind::LogisticRegression | ModelKind::Mlp1 { .. } => (softplus(z) - y * z, sigmoid(z) - y),
        }
    }

    pub fn loss(&self, w: &Vector, x: &[f64], y: f64) -> f64 {
        self.loss_from_score(self.score(w, x), y).0
    }

    /// Returns `ℓ(w; x, y)` and adds `scale · ∇_w ℓ` into `grad`.
    pub fn loss_and_grad(&self, w: &Vector, x: &[f64], y: f64, scale: f64, grad: &mut Vector) -> f64 {
        let d = self.feature_dim;
        match self.kind {
            ModelKind::LinearRegression | ModelKind::LogisticRegression => {
                let (loss, dz) = self.loss_from_score(self.score(w, x), y);
                let s = scale * dz;
                let g = grad.as_mut_slice();
                for (gk, xk) in g[..d].iter_mut().zip(x) {
                    *gk += s * xk;
                }
                g[d] += s;
                loss
            }
            ModelKind::Mlp1 { hidden } => {
                let p = w.as_slice();
                let w1 = &p[..hidden * d];
                let b1 = &p[hidden * d..hidden * d + hidden];
                let w2 = &p[hidden * d + hidden..hidden * d + 2 * hidden];
                let b2 = p[hidden * d + 2 * hidden];
                let act: Vec<f64> = (0..hidden)
                    .map(|h| {
                        (w1[h * d..(h + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b1[h]).tanh()
                    })
                    .collect();
                let z = b2 + w2.iter().zip(&act).map(|(a, b)| a * b).sum::<f64>();
                let (loss, dz) = self.loss_from_score(z, y);
                let s = scale * dz;
                let g = grad.as_mut_slice();
                for h in 0..hidden {
                    let da = s * w2[h] * (1.0 - act[h] * act[h]);
                    for k in 0..d {
                        g[h * d + k] += da * x[k];
                    }
                    g[hidden * d + h] += da;
                    g[hidden * d + hidden + h] += s * act[h];
                }
                g[hidden * d + 2 * hidden] += s;
                loss
            }
        }
    }

    /// Predicted class for classification kinds.
    pub fn predict_class(&self, w: &Vector, x: &[f64]) -> f64 {
        if self.score(w, x) >= 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(model: InnerModel, y: f64) {
        let x = [0.7, -1.3, 0.4];
        let w = model.init_params(3).map(|v| v * 5.0);
        let mut g = Vector::zeros(model.num_params());
        model.loss_and_grad(&w, &x, y, 1.0, &mut g);
        for i in 0..w.len() {
            let h = f64::EPSILON.cbrt() * w[i].abs().max(1.0);
            let mut p = w.clone();
            p[i] += h;
            let mut m = w.clone();
            m[i] -= h;
            let fd = (model.loss(&p, &x, y) - model.loss(&m, &x, y)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7 * g[i].abs().max(1.0), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(InnerModel::new(ModelKind::LinearRegression, 3, 0.0).unwrap(), 0.8);
        fd_check(InnerModel::new(ModelKind::LogisticRegression, 3, 0.0).unwrap(), 1.0);
        fd_check(InnerModel::new(ModelKind::Mlp1 { hidden: 4 }, 3, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(InnerModel::new(ModelKind::LinearRegression, 5, 0.0).unwrap().num_params(), 6);
        assert_eq!(
            InnerModel::new(ModelKind::Mlp1 { hidden: DEFAULT_HIDDEN }, 5, 0.0).unwrap().num_params(),
            8 * 5 + 17
        );
    }

    #[test]
    fn logistic_loss_is_stable() {
        let m = InnerModel::new(ModelKind::LogisticRegression, 1, 0.0).unwrap();
        let w = Vector::from_vec(vec![1000.0, 0.0]);
        assert!(m.loss(&w, &[1.0], 0.0).is_finite());
        assert!(m.loss(&w, &[1.0], 1.0) < 1e-12);
    }
}
