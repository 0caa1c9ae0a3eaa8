use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::error::{Error, Result};
use crate::io::{fmt_float, parse_float, write_csv};
use crate::rng::{keyed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    /// Binary labels in `{0, 1}`.
    Classification,
}

/// Planted generating distribution. Features are standard normal.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    /// `y = θᵀx + b + ε`, `ε ~ N(0, noise_std²)`.
    LinearGaussian {
        theta: Vec<f64>,
        bias: f64,
        noise_std: f64,
    },
    /// `y ~ Bernoulli(sigmoid(θᵀx + b))`.
    Logistic { theta: Vec<f64>, bias: f64 },
}

impl Generator {
    pub fn feature_dim(&self) -> usize {
        match self {
            Generator::LinearGaussian { theta, .. } | Generator::Logistic { theta, .. } => theta.len(),
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Generator::LinearGaussian { .. } => Task::Regression,
            Generator::Logistic { .. } => Task::Classification,
        }
    }
}

/// Descriptor of one synthetic source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    /// Also keys the random streams, so distinct ids give independent draws.
    pub source_id: u64,
    pub n: usize,
    pub generator: Generator,
    /// Fraction of examples whose label is replaced, in `[0, 1]`.
    pub corruption: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSource {
    pub source_id: u64,
    pub task: Task,
    /// `n × feature_dim`.
    pub features: DMatrix<f64>,
    pub labels: Vec<f64>,
    /// Ground truth for evaluation only; never read by any loss.
    pub corrupted_mask: Vec<bool>,
}

impl DataSource {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn corrupted_count(&self) -> usize {
        self.corrupted_mask.iter().filter(|&&c| c).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub sources: Vec<DataSource>,
    pub feature_dim: usize,
}

impl SyntheticDataset {
    pub fn new(sources: Vec<DataSource>) -> Result<Self> {
        let first = sources.first().ok_or(Error::EmptyDataset)?;
        let feature_dim = first.features.ncols();
        for s in &sources {
            if s.is_empty() {
                return Err(Error::InvalidArgument(format!("source {} is empty", s.source_id)));
            }
            if s.features.ncols() != feature_dim
                || s.features.nrows() != s.len()
                || s.corrupted_mask.len() != s.len()
            {
                return Err(Error::InvalidArgument(format!(
                    "source {} has inconsistent shapes",
                    s.source_id
                )));
            }
        }
        Ok(Self {
            sources,
            feature_dim,
        })
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn total_len(&self) -> usize {
        self.sources.iter().map(DataSource::len).sum()
    }

    /// `(source index, example index)` for every example, source-major.
    pub fn refs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sources
            .iter()
            .enumerate()
            .flat_map(|(s, src)| (0..src.len()).map(move |j| (s, j)))
    }

    /// Concatenates all sources into one (ids of the first source are kept).
    pub fn pooled(&self) -> Result<SyntheticDataset> {
        let n = self.total_len();
        let d = self.feature_dim;
        let mut features = DMatrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        for (row, (s, j)) in self.refs().enumerate() {
            let src = &self.sources[s];
            features.row_mut(row).copy_from(&src.features.row(j));
            labels.push(src.labels[j]);
            mask.push(src.corrupted_mask[j]);
        }
        SyntheticDataset::new(vec![DataSource {
            source_id: self.sources[0].source_id,
            task: self.sources[0].task,
            features,
            labels,
            corrupted_mask: mask,
        }])
    }

    /// Keeps only the pooled examples whose flattened index is in `keep`.
    pub fn subset(&self, keep: &[usize]) -> Result<SyntheticDataset> {
        let pooled = self.pooled()?;
        let src = &pooled.sources[0];
        let d = self.feature_dim;
        let mut features = DMatrix::zeros(keep.len(), d);
        let mut labels = Vec::with_capacity(keep.len());
        let mut mask = Vec::with_capacity(keep.len());
        for (row, &i) in keep.iter().enumerate() {
            if i >= src.len() {
                return Err(Error::InvalidArgument(format!("subset index {i} out of range")));
            }
            features.row_mut(row).copy_from(&src.features.row(i));
            labels.push(src.labels[i]);
            mask.push(src.corrupted_mask[i]);
        }
        SyntheticDataset::new(vec![DataSource {
            source_id: src.source_id,
            task: src.task,
            features,
            labels,
            corrupted_mask: mask,
        }])
    }

    /// Writes `source_id, example_index, corrupted, label, f0..f{d-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header: Vec<String> = ["source_id", "example_index", "corrupted", "label"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..self.feature_dim).map(|i| format!("f{i}")));
        let rows: Vec<Vec<String>> = self
            .refs()
            .map(|(s, j)| {
                let src = &self.sources[s];
                let mut row = vec![
                    src.source_id.to_string(),
                    j.to_string(),
                    u8::from(src.corrupted_mask[j]).to_string(),
                    fmt_float(src.labels[j]),
                ];
                row.extend(src.features.row(j).iter().map(|&v| fmt_float(v)));
                row
            })
            .collect();
        write_csv(path, &header, &rows)
    }

    /// Reads the format produced by [`SyntheticDataset::write_csv`]. Rows are
    /// grouped by `source_id` in order of first appearance.
    pub fn read_csv(path: &Path, task: Task) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.clone();
        if header.len() < 4
            || &header[0] != "source_id"
            || &header[1] != "example_index"
            || &header[2] != "corrupted"
            || &header[3] != "label"
        {
            return Err(Error::InvalidArgument("unexpected dataset CSV header".into()));
        }
        let d = header.len() - 4;
        for (i, h) in header.iter().skip(4).enumerate() {
            if h != format!("f{i}") {
                return Err(Error::InvalidArgument(format!("unexpected feature column {h:?}")));
            }
        }
        let mut groups: Vec<(u64, Vec<f64>, Vec<f64>, Vec<bool>)> = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let id: u64 = rec[0]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad source_id {:?}", &rec[0])))?;
            let corrupted = match &rec[2] {
                "0" => false,
                "1" => true,
                other => return Err(Error::InvalidArgument(format!("bad corrupted flag {other:?}"))),
            };
            let label = parse_float(&rec[3])?;
            let feats = (4..4 + d).map(|i| parse_float(&rec[i])).collect::<Result<Vec<_>>>()?;
            let idx = match groups.iter().position(|g| g.0 == id) {
                Some(i) => i,
                None => {
                    groups.push((id, Vec::new(), Vec::new(), Vec::new()));
                    groups.len() - 1
                }
            };
            let g = &mut groups[idx];
            g.1.extend(feats);
            g.2.push(label);
            g.3.push(corrupted);
        }
        let sources = groups
            .into_iter()
            .map(|(id, feats, labels, mask)| DataSource {
                source_id: id,
                task,
                features: DMatrix::from_row_slice(labels.len(), d, &feats),
                labels,
                corrupted_mask: mask,
            })
            .collect();
        SyntheticDataset::new(sources)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn generate_source(spec: &SourceSpec, seed: u64) -> Result<DataSource> {
    if !(0.0..=1.0).contains(&spec.corruption) {
        return Err(Error::InvalidArgument(format!(
            "corruption fraction {} outside [0, 1]",
            spec.corruption
        )));
    }
    if spec.n == 0 {
        return Err(Error::InvalidArgument(format!("source {} has n = 0", spec.source_id)));
    }
    let d = spec.generator.feature_dim();
    if d == 0 {
        return Err(Error::InvalidArgument("feature dimension must be positive".into()));
    }
    let n = spec.n;

    let mut frng = keyed(seed, Stream::DataFeatures(spec.source_id), 0);
    let mut features = DMatrix::zeros(n, d);
    for i in 0..n {
        for k in 0..d {
            features[(i, k)] = frng.sample::<f64, _>(StandardNormal);
        }
    }

    let mut lrng = keyed(seed, Stream::DataLabels(spec.source_id), 0);
    let mut labels: Vec<f64> = (0..n)
        .map(|i| match &spec.generator {
            Generator::LinearGaussian {
                theta,
                bias,
                noise_std,
            } => {
                let mean: f64 = theta.iter().enumerate().map(|(k, t)| t * features[(i, k)]).sum::<f64>() + bias;
                mean + noise_std * lrng.sample::<f64, _>(StandardNormal)
            }
            Generator::Logistic { theta, bias } => {
                let z: f64 = theta.iter().enumerate().map(|(k, t)| t * features[(i, k)]).sum::<f64>() + bias;
                if lrng.random::<f64>() < sigmoid(z) {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect();

    let count = (spec.corruption * n as f64).floor() as usize;
    let mut crng = keyed(seed, Stream::DataCorruption(spec.source_id), 0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crng);
    let mut mask = vec![false; n];
    for &i in &order[..count] {
        mask[i] = true;
    }
    if count > 0 {
        match spec.generator.task() {
            Task::Classification => {
                for (i, label) in labels.iter_mut().enumerate() {
                    if mask[i] {
                        *label = if crng.random::<bool>() { 1.0 } else { 0.0 };
                    }
                }
            }
            Task::Regression => {
                let mean = labels.iter().sum::<f64>() / n as f64;
                let var = labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
                let scale = 10.0 * var.sqrt().max(f64::MIN_POSITIVE);
                let t = StudentT::new(2.0).expect("df = 2 is valid");
                for (i, label) in labels.iter_mut().enumerate() {
                    if mask[i] {
                        *label = scale * t.sample(&mut crng);
                    }
                }
            }
        }
    }

    Ok(DataSource {
        source_id: spec.source_id,
        task: spec.generator.task(),
        features,
        labels,
        corrupted_mask: mask,
    })
}

/// Generates one source per descriptor.
///
/// Corrupted examples are exactly `floor(corruption · n)` indices chosen by a
/// seeded shuffle. Classification labels are redrawn uniformly from `{0, 1}`;
/// regression labels are replaced by Student-t (2 d.o.f.) draws scaled by ten
/// times the label standard deviation.
pub fn gen_sources(specs: &[SourceSpec], seed: u64) -> Result<SyntheticDataset> {
    if specs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = specs[0].generator.feature_dim();
    if specs.iter().any(|s| s.generator.feature_dim() != d) {
        return Err(Error::InvalidArgument("sources disagree on feature dimension".into()));
    }
    let sources = specs
        .iter()
        .map(|s| generate_source(s, seed))
        .collect::<Result<Vec<_>>>()?;
    SyntheticDataset::new(sources)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logistic(id: u64, n: usize, corruption: f64) -> SourceSpec {
        SourceSpec {
            source_id: id,
            n,
            generator: Generator::Logistic {
                theta: vec![1.0, -2.0, 0.5],
                bias: 0.0,
            },
            corruption,
        }
    }

    #[test]
    fn clean_source_has_empty_mask() {
        let ds = gen_sources(&[logistic(0, 100, 0.0)], 1).unwrap();
        assert!(ds.sources[0].corrupted_mask.iter().all(|&c| !c));
    }

    #[test]
    fn denoising_split_sizes() {
        let ds = gen_sources(&[logistic(0, 1000, 0.0), logistic(1, 9000, 1.0)], 3).unwrap();
        assert_eq!(ds.sources[0].corrupted_count(), 0);
        assert_eq!(ds.sources[1].corrupted_count(), 9000);
        assert_eq!(ds.total_len(), 10_000);
    }

    #[test]
    fn corruption_count_is_floor() {
        let ds = gen_sources(&[logistic(0, 1000, 0.3)], 5).unwrap();
        assert_eq!(ds.sources[0].corrupted_count(), 300);
        let ds = gen_sources(&[logistic(0, 7, 0.5)], 5).unwrap();
        assert_eq!(ds.sources[0].corrupted_count(), 3);
    }

    #[test]
    fn rejects_bad_fraction() {
        assert!(gen_sources(&[logistic(0, 10, 1.5)], 1).is_err());
        assert!(gen_sources(&[logistic(0, 10, -0.1)], 1).is_err());
    }

    #[test]
    fn regression_corruption_is_heavy() {
        let spec = SourceSpec {
            source_id: 4,
            n: 2000,
            generator: Generator::LinearGaussian {
                theta: vec![1.0, 1.0],
                bias: 0.0,
                noise_std: 0.1,
            },
            corruption: 0.5,
        };
        let ds = gen_sources(&[spec], 9).unwrap();
        let src = &ds.sources[0];
        let max_clean = src
            .labels
            .iter()
            .zip(&src.corrupted_mask)
            .filter(|(_, &c)| !c)
            .map(|(y, _)| y.abs())
            .fold(0.0, f64::max);
        let max_bad = src
            .labels
            .iter()
            .zip(&src.corrupted_mask)
            .filter(|(_, &c)| c)
            .map(|(y, _)| y.abs())
            .fold(0.0, f64::max);
        assert!(max_bad > 5.0 * max_clean);
    }

    #[test]
    fn bit_deterministic() {
        let specs = [logistic(0, 50, 0.2), logistic(1, 30, 0.0)];
        assert_eq!(gen_sources(&specs, 42).unwrap(), gen_sources(&specs, 42).unwrap());
        assert_ne!(gen_sources(&specs, 42).unwrap(), gen_sources(&specs, 43).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let ds = gen_sources(&[logistic(3, 20, 0.25), logistic(8, 5, 0.0)], 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        ds.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("source_id,example_index,corrupted,label,f0,f1,f2\n"));
        let back = SyntheticDataset::read_csv(&path, Task::Classification).unwrap();
        assert_eq!(back, ds);
    }
}
