//! Data-reweighting problems over small analytic models.
//!
//! [`SourceReweightProblem`] learns softmax mixture weights over data sources;
//! [`HyperCleanProblem`] learns one sigmoid weight per training example.

mod hyperclean;
mod model;
mod softmax;
mod source;

pub use hyperclean::{HyperCleanProblem, DEFAULT_HYPERCLEAN_C};
pub use model::{InnerModel, ModelKind, DEFAULT_HIDDEN, DEFAULT_RIDGE};
pub use softmax::{sigmoid, softmax, softmax_jacobian_apply, MixtureWeights};
pub use source::SourceReweightProblem;

/// Row-major copy of a dataset's features, one slice per example.
#[derive(Debug, Clone)]
pub(crate) struct Rows {
    data: Vec<f64>,
    labels: Vec<f64>,
    offsets: Vec<usize>,
    d: usize,
}

impl Rows {
    pub(crate) fn new(ds: &crate::problems::SyntheticDataset) -> Self {
        let d = ds.feature_dim;
        let mut data = Vec::with_capacity(ds.total_len() * d);
        let mut labels = Vec::with_capacity(ds.total_len());
        let mut offsets = Vec::with_capacity(ds.num_sources() + 1);
        offsets.push(0);
        for src in &ds.sources {
            for j in 0..src.len() {
                data.extend(src.features.row(j).iter());
                labels.push(src.labels[j]);
            }
            offsets.push(labels.len());
        }
        Self {
            data,
            labels,
            offsets,
            d,
        }
    }

    pub(crate) fn flat_index(&self, source: usize, example: usize) -> usize {
        self.offsets[source] + example
    }

    pub(crate) fn x(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub(crate) fn y(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub(crate) fn len(&self) -> usize {
        self.labels.len()
    }

    pub(crate) fn source_range(&self, source: usize) -> std::ops::Range<usize> {
        self.offsets[source]..self.offsets[source + 1]
    }

    pub(crate) fn max_aug_norm_sq(&self) -> f64 {
        (0..self.len())
            .map(|i| 1.0 + self.x(i).iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub(crate) fn sum_aug_norm(&self, power: i32) -> f64 {
        (0..self.len())
            .map(|i| (1.0 + self.x(i).iter().map(|v| v * v).sum::<f64>()).sqrt().powi(power))
            .sum()
    }
}
