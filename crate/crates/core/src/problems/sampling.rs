use rand::Rng;

use super::SyntheticDataset;
use crate::error::{Error, Result};
use crate::rng::{keyed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Train,
    Val,
}

impl Origin {
    pub fn name(self) -> &'static str {
        match self {
            Origin::Train => "train",
            Origin::Val => "val",
        }
    }
}

/// A minibatch: references into a dataset plus the split it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchHandle {
    pub example_refs: Vec<(usize, usize)>,
    pub origin: Origin,
}

impl BatchHandle {
    pub fn len(&self) -> usize {
        self.example_refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.example_refs.is_empty()
    }

    pub fn expect_origin(&self, expected: Origin) -> Result<()> {
        if self.origin == expected {
            Ok(())
        } else {
            Err(Error::WrongOrigin {
                expected: expected.name(),
                actual: self.origin.name(),
            })
        }
    }

    /// Checks every reference against `dataset`.
    pub fn validate(&self, dataset: &SyntheticDataset) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("batch is empty".into()));
        }
        for &(s, j) in &self.example_refs {
            let ok = dataset.sources.get(s).is_some_and(|src| j < src.len());
            if !ok {
                return Err(Error::InvalidArgument(format!("batch reference ({s}, {j}) out of range")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub batch_size_train: usize,
    pub batch_size_val: usize,
    pub seed: u64,
    /// Std of additive Gaussian noise on `L1` gradients.
    pub gradient_noise_sigma1: f64,
    /// Std of additive Gaussian noise on `L2` gradients.
    pub gradient_noise_sigma2: f64,
}

impl SamplerConfig {
    pub fn new(batch_size_train: usize, batch_size_val: usize, seed: u64) -> Self {
        Self {
            batch_size_train,
            batch_size_val,
            seed,
            gradient_noise_sigma1: 0.0,
            gradient_noise_sigma2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size_train == 0 || self.batch_size_val == 0 {
            return Err(Error::InvalidArgument("batch sizes must be at least 1".into()));
        }
        if !(self.gradient_noise_sigma1 >= 0.0) || !(self.gradient_noise_sigma2 >= 0.0) {
            return Err(Error::InvalidArgument("gradient noise must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn batch_size(&self, origin: Origin) -> usize {
        match origin {
            Origin::Train => self.batch_size_train,
            Origin::Val => self.batch_size_val,
        }
    }
}

/// Draws an i.i.d. batch with replacement, as a pure function of
/// `(seed, origin, step_index)`.
///
/// Train batches pick a source uniformly and then an example uniformly within
/// it; the reweighting estimators correct for this stratification. Validation
/// batches draw uniformly from the pooled examples.
pub fn sample_batch(
    dataset: &SyntheticDataset,
    config: &SamplerConfig,
    origin: Origin,
    step_index: u64,
) -> Result<BatchHandle> {
    config.validate()?;
    if dataset.sources.is_empty() || dataset.total_len() == 0 {
        return Err(Error::EmptyDataset);
    }
    let size = config.batch_size(origin);
    let example_refs = match origin {
        Origin::Train => {
            let mut rng = keyed(config.seed, Stream::TrainBatch, step_index);
            let m = dataset.num_sources();
            (0..size)
                .map(|_| {
                    let s = rng.random_range(0..m);
                    let j = rng.random_range(0..dataset.sources[s].len());
                    (s, j)
                })
                .collect()
        }
        Origin::Val => {
            let mut rng = keyed(config.seed, Stream::ValBatch, step_index);
            let total = dataset.total_len();
            (0..size)
                .map(|_| {
                    let mut i = rng.random_range(0..total);
                    let mut s = 0;
                    while i >= dataset.sources[s].len() {
                        i -= dataset.sources[s].len();
                        s += 1;
                    }
                    (s, i)
                })
                .collect()
        }
    };
    Ok(BatchHandle {
        example_refs,
        origin,
    })
}
