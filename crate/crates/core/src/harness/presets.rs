use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{ExperimentConfig, Preset};
use super::plot::emit_weight_plot;
use super::report::{ExperimentReport, Relation, Verdict, WeightSummary};
use crate::error::{Error, Result};
use crate::io::{fmt_float, write_csv};
use crate::minimax::{make_partition, run, Init, RunOptions, RunRecord};
use crate::problems::{gen_sources, BilevelProblem, Generator, SamplerConfig, SourceSpec, SyntheticDataset, Vector};
use crate::reweight::{HyperCleanProblem, InnerModel, SourceReweightProblem};
use crate::rng::{keyed, Stream};

/// Norm of planted classifier parameters; large enough that clean labels are mostly deterministic.
const CLASSIFIER_NORM: f64 = 4.0;
/// Sharper classifier for hyper-cleaning, so that label flips cost accuracy.
const HYPERCLEAN_NORM: f64 = 15.0;
/// Norm of planted regression parameters.
const REGRESSION_NORM: f64 = 3.0;
const REGRESSION_NOISE: f64 = 0.1;
/// Half the label offset between the two mixture distributions.
const REGRESSION_OFFSET: f64 = 3.0;

/// Seeded direction of norm `norm` in `d` dimensions; `tag` separates draws.
fn planted(seed: u64, tag: u64, d: usize, norm: f64) -> Vec<f64> {
    let mut rng = keyed(seed, Stream::Instance, 1000 + tag);
    let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let len = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    v.into_iter().map(|x| x * norm / len).collect()
}

fn logistic(seed: u64, d: usize) -> Generator {
    Generator::Logistic { theta: planted(seed, 0, d, CLASSIFIER_NORM), bias: 0.0 }
}

fn spec(source_id: u64, n: usize, generator: &Generator, corruption: f64) -> SourceSpec {
    SourceSpec { source_id, n, generator: generator.clone(), corruption }
}

/// Training and validation sets of a two-source reweighting preset.
pub fn reweight_datasets(cfg: &ExperimentConfig) -> Result<(SyntheticDataset, SyntheticDataset)> {
    let d = cfg.feature_dim;
    let (train, val) = match cfg.preset {
        Preset::Denoise => {
            let g = logistic(cfg.seed, d);
            (
                vec![spec(0, cfg.sizes[0], &g, 0.0), spec(1, cfg.sizes[1], &g, 1.0)],
                vec![spec(2, cfg.val_size, &g, 0.0)],
            )
        }
        Preset::Quality => {
            let g = logistic(cfg.seed, d);
            (
                vec![spec(0, cfg.sizes[0], &g, 0.0), spec(1, cfg.sizes[1], &g, cfg.corruption)],
                vec![spec(2, cfg.val_size, &g, 0.0)],
            )
        }
        Preset::Mixture => {
            // The two distributions share a slope and differ by a label offset.
            let theta = planted(cfg.seed, 0, d, REGRESSION_NORM);
            let ga = Generator::LinearGaussian { theta: theta.clone(), bias: REGRESSION_OFFSET, noise_std: REGRESSION_NOISE };
            let gb = Generator::LinearGaussian { theta, bias: -REGRESSION_OFFSET, noise_std: REGRESSION_NOISE };
            let na = (cfg.mixture[0] * cfg.val_size as f64).round() as usize;
            let nb = cfg.val_size - na;
            let mut val = Vec::new();
            if na > 0 {
                val.push(spec(2, na, &ga, 0.0));
            }
            if nb > 0 {
                val.push(spec(3, nb, &gb, 0.0));
            }
            (vec![spec(0, cfg.sizes[0], &ga, 0.0), spec(1, cfg.sizes[1], &gb, 0.0)], val)
        }
        other => {
            return Err(Error::Config(format!("{} is not a source-reweighting preset", other.name())));
        }
    };
    Ok((gen_sources(&train, cfg.seed)?, gen_sources(&val, cfg.seed)?))
}

/// Training and validation sets of the hyper-cleaning preset.
pub fn hyperclean_datasets(cfg: &ExperimentConfig) -> Result<(SyntheticDataset, SyntheticDataset)> {
    let g = Generator::Logistic { theta: planted(cfg.seed, 0, cfg.feature_dim, HYPERCLEAN_NORM), bias: 0.0 };
    Ok((
        gen_sources(&[spec(0, cfg.sizes[0], &g, cfg.corruption)], cfg.seed)?,
        gen_sources(&[spec(1, cfg.val_size, &g, 0.0)], cfg.seed)?,
    ))
}

pub fn build_reweight_problem(cfg: &ExperimentConfig) -> Result<SourceReweightProblem> {
    let (train, val) = reweight_datasets(cfg)?;
    let model = InnerModel::new(cfg.model, cfg.feature_dim, cfg.ridge)?;
    SourceReweightProblem::new(train, val, model)
}

pub fn build_hyperclean_problem(cfg: &ExperimentConfig) -> Result<HyperCleanProblem> {
    let (train, val) = hyperclean_datasets(cfg)?;
    HyperCleanProblem::new(&train, &val, cfg.model, cfg.ridge)
}

/// Runs the solver as configured and writes `trajectory.csv` (also on abort).
pub fn run_solver(cfg: &ExperimentConfig, problem: &dyn BilevelProblem, out: &Path) -> Result<RunRecord> {
    let schedule = cfg.schedule()?;
    let sampler = SamplerConfig::new(cfg.batch_train, cfg.batch_val, cfg.seed);
    let dw = problem.dim_w();
    let pu = make_partition(dw, cfg.blocks_u, cfg.partition)?;
    let pw = make_partition(dw, cfg.blocks_w, cfg.partition)?;
    let init = Init::symmetric(problem.dim_lambda(), dw, cfg.seed);
    let options = RunOptions { log_every: cfg.log_every, record_time: false };
    let path = out.join("trajectory.csv");
    match run(problem, &schedule, &sampler, pu, pw, init, &options) {
        Ok(record) => {
            record.write_csv(&path, false)?;
            Ok(record)
        }
        Err(aborted) => {
            aborted.record.write_csv(&path, false)?;
            Err(aborted.error)
        }
    }
}

fn finish_weights(report: &mut ExperimentReport, record: &RunRecord, out: &Path) -> Result<Vector> {
    let p = record
        .last()
        .and_then(|r| r.p.clone())
        .ok_or_else(|| Error::InvalidArgument("run produced no weights".into()))?;
    report.final_weights = Some(p.iter().copied().collect());
    report.outputs.push(out.join("trajectory.csv"));
    let svg = out.join("weights.svg");
    emit_weight_plot(record, &svg)?;
    report.outputs.push(svg);
    Ok(p)
}

/// Two-source denoising: the corrupted source should be driven to near-zero weight.
pub fn run_denoise(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let problem = build_reweight_problem(cfg)?;
    let record = run_solver(cfg, &problem, &cfg.out)?;
    let mut report = ExperimentReport::new(cfg.preset.name(), cfg.seed);
    let p = finish_weights(&mut report, &record, &cfg.out)?;
    report.push(Verdict::check("p_corrupted", p[1], Relation::Less, 0.05));
    Ok(report)
}

/// Mixture recovery: weights should match the validation composition.
pub fn run_mixture(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let problem = build_reweight_problem(cfg)?;
    let record = run_solver(cfg, &problem, &cfg.out)?;
    let mut report = ExperimentReport::new(cfg.preset.name(), cfg.seed);
    let p = finish_weights(&mut report, &record, &cfg.out)?;
    for (i, target) in cfg.mixture.iter().enumerate() {
        report.push(Verdict::check(format!("|p_{i} - {target}|"), (p[i] - target).abs(), Relation::Less, 0.05));
    }
    Ok(report)
}

/// Quality over quantity: the small clean source should outweigh the large noisy one.
pub fn run_quality(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let problem = build_reweight_problem(cfg)?;
    let record = run_solver(cfg, &problem, &cfg.out)?;
    let mut report = ExperimentReport::new(cfg.preset.name(), cfg.seed);
    let p = finish_weights(&mut report, &record, &cfg.out)?;
    report.metric("train_share_high_quality", cfg.sizes[0] as f64 / cfg.sizes.iter().sum::<usize>() as f64);
    report.push(Verdict::check("p_high_quality", p[0], Relation::Greater, 0.5));
    Ok(report)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Median/mean weight of clean and corrupted examples.
pub fn summarize_weights(weights: &Vector, corrupted: &[bool]) -> WeightSummary {
    let (mut clean, mut bad) = (Vec::new(), Vec::new());
    for (w, &c) in weights.iter().zip(corrupted) {
        if c {
            bad.push(*w);
        } else {
            clean.push(*w);
        }
    }
    WeightSummary {
        mean_clean: mean(&clean),
        mean_corrupted: mean(&bad),
        median_clean: median(clean),
        median_corrupted: median(bad),
    }
}

/// Indices of the `⌈n/2⌉` largest weights, ties broken by index.
pub fn top_half(weights: &Vector) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order.truncate(weights.len().div_ceil(2));
    order.sort_unstable();
    order
}

/// Per-example hyper-cleaning, judged by weight separation and retraining accuracy.
pub fn run_hyperclean(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let problem = build_hyperclean_problem(cfg)?;
    let record = run_solver(cfg, &problem, &cfg.out)?;
    let mut report = ExperimentReport::new(cfg.preset.name(), cfg.seed);
    report.outputs.push(cfg.out.join("trajectory.csv"));

    let weights = problem.weights(&record.final_lambda);
    let mask = &problem.train().sources[0].corrupted_mask;
    let summary = summarize_weights(&weights, mask);

    let path = cfg.out.join("example_weights.csv");
    let header: Vec<String> = ["example_index", "corrupted", "weight"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = weights
        .iter()
        .zip(mask)
        .enumerate()
        .map(|(i, (w, &c))| vec![i.to_string(), u8::from(c).to_string(), fmt_float(*w)])
        .collect();
    write_csv(&path, &header, &rows)?;
    report.outputs.push(path);

    let all: Vec<usize> = (0..problem.num_train()).collect();
    let uniform_acc = problem.validation_accuracy(&problem.refit(&all)?);
    let top_acc = problem.validation_accuracy(&problem.refit(&top_half(&weights))?);
    let solver_acc = problem.validation_accuracy(&record.final_w);
    report.metric("accuracy_uniform", uniform_acc);
    report.metric("accuracy_top_half", top_acc);
    report.metric("accuracy_solver_w", solver_acc);
    report.metric("accuracy_gain", top_acc - uniform_acc);
    report.metric("corruption", cfg.corruption);

    if summary.median_clean.is_nan() || summary.median_corrupted.is_nan() {
        report.push(Verdict::check("median weight gap (clean - corrupted)", f64::NAN, Relation::Greater, 0.0));
    } else {
        report.push(Verdict::check(
            "median weight gap (clean - corrupted)",
            summary.median_clean - summary.median_corrupted,
            Relation::Greater,
            0.0,
        ));
    }
    report.push(Verdict::check("top-half accuracy - uniform accuracy", top_acc - uniform_acc, Relation::Greater, 0.0));
    report.weight_summary = Some(summary);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_has_requested_norm() {
        let v = planted(3, 0, 7, 2.5);
        assert!((v.iter().map(|x| x * x).sum::<f64>().sqrt() - 2.5).abs() < 1e-12);
        assert_ne!(planted(3, 0, 7, 1.0), planted(3, 1, 7, 1.0));
    }

    #[test]
    fn median_and_top_half() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        let w = Vector::from_vec(vec![0.1, 0.9, 0.5, 0.9, 0.2]);
        assert_eq!(top_half(&w), vec![1, 2, 3]);
    }

    #[test]
    fn weight_summary_splits_by_mask() {
        let w = Vector::from_vec(vec![0.9, 0.1, 0.8, 0.2]);
        let s = summarize_weights(&w, &[false, true, false, true]);
        assert!((s.median_clean - 0.85).abs() < 1e-15);
        assert!((s.median_corrupted - 0.15).abs() < 1e-15);
    }

    #[test]
    fn denoise_datasets_mirror_split() {
        let cfg = ExperimentConfig::defaults(Preset::Denoise);
        let (train, val) = reweight_datasets(&cfg).unwrap();
        assert_eq!(train.sources[0].len(), 1000);
        assert_eq!(train.sources[1].len(), 9000);
        assert_eq!(train.sources[1].corrupted_count(), 9000);
        assert_eq!(train.sources[0].corrupted_count(), 0);
        assert_eq!(val.total_len(), 1000);
    }

    #[test]
    fn mixture_validation_composition() {
        let cfg = ExperimentConfig::defaults(Preset::Mixture);
        let (_, val) = reweight_datasets(&cfg).unwrap();
        assert_eq!(val.sources[0].len(), 600);
        assert_eq!(val.sources[1].len(), 400);
    }
}
