use std::fmt;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use super::partition::BlockPartition;
use super::record::{RunRecord, RunRow};
use super::schedule::{AdamParams, Schedule, UpdateRule};
use crate::error::{ensure_len, Error, Result};
use crate::problems::{BilevelProblem, Evaluation, Origin, SamplerConfig, Vector};
use crate::rng::{keyed, Stream};

/// Starting point `(λ₀, w₀, u₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Init {
    pub lambda0: Vector,
    pub w0: Vector,
    pub u0: Vector,
}

impl Init {
    /// `λ₀ = 0` and `w₀ = u₀` drawn from a seeded `N(0, 0.1²)`.
    pub fn symmetric(dim_lambda: usize, dim_w: usize, seed: u64) -> Self {
        let mut rng = keyed(seed, Stream::Init, 0);
        let w0 = Vector::from_fn(dim_w, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
        Self {
            lambda0: Vector::zeros(dim_lambda),
            u0: w0.clone(),
            w0,
        }
    }

    pub fn zeros(dim_lambda: usize, dim_w: usize) -> Self {
        Self {
            lambda0: Vector::zeros(dim_lambda),
            w0: Vector::zeros(dim_w),
            u0: Vector::zeros(dim_w),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vector,
    v: Vector,
    t: Vec<u64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            m: Vector::zeros(dim),
            v: Vector::zeros(dim),
            t: vec![0; dim],
        }
    }

    fn step(&mut self, p: &AdamParams, i: usize, d: f64) -> f64 {
        self.t[i] += 1;
        self.m[i] = p.beta1 * self.m[i] + (1.0 - p.beta1) * d;
        self.v[i] = p.beta2 * self.v[i] + (1.0 - p.beta2) * d * d;
        let t = self.t[i] as i32;
        let m_hat = self.m[i] / (1.0 - p.beta1.powi(t));
        let v_hat = self.v[i] / (1.0 - p.beta2.powi(t));
        m_hat / (v_hat.sqrt() + p.eps)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct MomentState {
    lambda: Moments,
    w: Moments,
    u: Moments,
}

/// Iterate `(λ_k, w_k, u_k)` with block partitions and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleBiOState {
    pub lambda: Vector,
    pub w: Vector,
    pub u: Vector,
    pub step: usize,
    pub partition_u: BlockPartition,
    pub partition_w: BlockPartition,
    moments: Option<MomentState>,
}

impl ScaleBiOState {
    pub fn new(
        problem: &dyn BilevelProblem,
        init: Init,
        partition_u: BlockPartition,
        partition_w: BlockPartition,
    ) -> Result<Self> {
        ensure_len("lambda0", problem.dim_lambda(), init.lambda0.len())?;
        ensure_len("w0", problem.dim_w(), init.w0.len())?;
        ensure_len("u0", problem.dim_w(), init.u0.len())?;
        ensure_len("u partition", problem.dim_w(), partition_u.dim())?;
        ensure_len("w partition", problem.dim_w(), partition_w.dim())?;
        Ok(Self {
            lambda: init.lambda0,
            w: init.w0,
            u: init.u0,
            step: 0,
            partition_u,
            partition_w,
            moments: None,
        })
    }
}

/// What one step drew and computed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Step index `k` the report belongs to (state moved from `k` to `k + 1`).
    pub step: usize,
    /// Block of `u` that was updated.
    pub block_u: usize,
    /// Block of `w` that was updated.
    pub block_w: usize,
    /// `∇_λL1(λ_k, w_k) + α(∇_λL2(λ_k, w_k) − ∇_λL2(λ_k, u_k))` on the step's batches.
    pub lambda_direction: Vector,
    /// `L1(λ_k, w_k)` on the validation batch.
    pub outer_value: f64,
    /// `L2(λ_k, w_k)` on the training batch.
    pub inner_value: f64,
}

fn add_noise(ev: &mut Evaluation, sigma: f64, seed: u64, stream: Stream, counter: u64) {
    if sigma == 0.0 {
        return;
    }
    let mut rng = keyed(seed, stream, counter);
    for g in ev.grad_lambda.iter_mut().chain(ev.grad_w.iter_mut()) {
        *g += sigma * rng.sample::<f64, _>(StandardNormal);
    }
}

fn check_finite(ev: &Evaluation, what: &str, step: usize) -> Result<()> {
    if ev.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            step,
        })
    }
}

/// One iteration of the solver. All gradients are taken at step-`k` values,
/// and the same training batch feeds every `L2` gradient of the step.
pub fn scalebio_step(
    problem: &dyn BilevelProblem,
    state: &mut ScaleBiOState,
    schedule: &Schedule,
    sampler: &SamplerConfig,
) -> Result<StepReport> {
    let k = state.step;
    let key = k as u64;
    let mut rng = keyed(sampler.seed, Stream::Blocks, key);
    let block_u = rng.random_range(0..state.partition_u.num_blocks());
    let block_w = rng.random_range(0..state.partition_w.num_blocks());

    let train = problem.sample_batch(sampler, Origin::Train, key)?;
    let val = problem.sample_batch(sampler, Origin::Val, key)?;

    let mut at_u = problem.inner(&state.lambda, &state.u, train.as_ref())?;
    let mut at_w = problem.inner(&state.lambda, &state.w, train.as_ref())?;
    let mut outer = problem.outer(&state.lambda, &state.w, val.as_ref())?;
    // Independent noise draw per evaluation.
    add_noise(&mut at_u, sampler.gradient_noise_sigma2, sampler.seed, Stream::InnerNoise, 2 * key);
    add_noise(&mut at_w, sampler.gradient_noise_sigma2, sampler.seed, Stream::InnerNoise, 2 * key + 1);
    add_noise(&mut outer, sampler.gradient_noise_sigma1, sampler.seed, Stream::OuterNoise, key);
    check_finite(&at_u, "inner gradient at u", k)?;
    check_finite(&at_w, "inner gradient at w", k)?;
    check_finite(&outer, "outer gradient at w", k)?;

    let alpha = schedule.alpha;
    let lambda_direction = &outer.grad_lambda + (&at_w.grad_lambda - &at_u.grad_lambda) * alpha;

    if let UpdateRule::Adam(_) = schedule.rule {
        if state.moments.is_none() {
            state.moments = Some(MomentState {
                lambda: Moments::new(state.lambda.len()),
                w: Moments::new(state.w.len()),
                u: Moments::new(state.u.len()),
            });
        }
    }

    match (schedule.rule, state.moments.as_mut()) {
        (UpdateRule::Adam(p), Some(mom)) => {
            for &i in state.partition_u.block(block_u) {
                state.u[i] -= schedule.eta_u * mom.u.step(&p, i, alpha * at_u.grad_w[i]);
            }
            for &i in state.partition_w.block(block_w) {
                let d = outer.grad_w[i] + alpha * at_w.grad_w[i];
                state.w[i] -= schedule.eta_w * mom.w.step(&p, i, d);
            }
            for i in 0..state.lambda.len() {
                state.lambda[i] -= schedule.eta_lambda * mom.lambda.step(&p, i, lambda_direction[i]);
            }
        }
        _ => {
            for &i in state.partition_u.block(block_u) {
                state.u[i] -= schedule.eta_u * alpha * at_u.grad_w[i];
            }
            for &i in state.partition_w.block(block_w) {
                state.w[i] -= schedule.eta_w * (outer.grad_w[i] + alpha * at_w.grad_w[i]);
            }
            state.lambda.axpy(-schedule.eta_lambda, &lambda_direction, 1.0);
        }
    }
    state.step += 1;

    Ok(StepReport {
        step: k,
        block_u,
        block_w,
        lambda_direction,
        outer_value: outer.value,
        inner_value: at_w.value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Log a row every this many steps (plus the first and last state). `0` logs only those two.
    pub log_every: usize,
    /// Record wall-clock time in each row.
    pub record_time: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            log_every: 100,
            record_time: false,
        }
    }
}

/// A run that stopped early; `record` holds every row logged before the failure
/// plus a final diagnostic row with non-finite losses.
#[derive(Debug)]
pub struct RunAborted {
    pub record: RunRecord,
    pub error: Error,
}

impl fmt::Display for RunAborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run aborted after {} logged rows: {}", self.record.rows.len(), self.error)
    }
}

impl std::error::Error for RunAborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<RunAborted> for Error {
    fn from(a: RunAborted) -> Self {
        a.error
    }
}

fn log_row(
    problem: &dyn BilevelProblem,
    state: &ScaleBiOState,
    update_norm: f64,
    started: Option<Instant>,
) -> Result<RunRow> {
    Ok(RunRow {
        step: state.step,
        lambda: state.lambda.clone(),
        p: problem.mixture_weights(&state.lambda),
        loss_val: problem.outer_value(&state.lambda, &state.w, None)?,
        loss_trn: problem.inner_value(&state.lambda, &state.w, None)?,
        lambda_update_norm: update_norm,
        elapsed_seconds: started.map(|t| t.elapsed().as_secs_f64()),
    })
}

/// Runs `K = schedule.total_steps` iterations and returns the logged trajectory
/// with the final `(λ_K, w_K, u_K)`.
pub fn run(
    problem: &dyn BilevelProblem,
    schedule: &Schedule,
    sampler: &SamplerConfig,
    partition_u: BlockPartition,
    partition_w: BlockPartition,
    init: Init,
    options: &RunOptions,
) -> std::result::Result<RunRecord, RunAborted> {
    run_with_observer(problem, schedule, sampler, partition_u, partition_w, init, options, |_, _| {})
}

/// [`run`] with a callback invoked after every step.
#[allow(clippy::too_many_arguments)]
pub fn run_with_observer(
    problem: &dyn BilevelProblem,
    schedule: &Schedule,
    sampler: &SamplerConfig,
    partition_u: BlockPartition,
    partition_w: BlockPartition,
    init: Init,
    options: &RunOptions,
    mut observer: impl FnMut(&ScaleBiOState, &StepReport),
) -> std::result::Result<RunRecord, RunAborted> {
    let empty = |error: Error| RunAborted {
        record: RunRecord::empty(problem.dim_lambda(), problem.mixture_weights(&Vector::zeros(problem.dim_lambda())).is_some()),
        error,
    };
    schedule.validate().map_err(empty)?;
    sampler.validate().map_err(empty)?;
    let mut state = ScaleBiOState::new(problem, init, partition_u, partition_w).map_err(empty)?;
    let started = options.record_time.then(Instant::now);
    let mut record = RunRecord::empty(problem.dim_lambda(), problem.mixture_weights(&state.lambda).is_some());

    match log_row(problem, &state, 0.0, started) {
        Ok(row) => record.rows.push(row),
        Err(error) => return Err(RunAborted { record, error }),
    }
    let total = schedule.total_steps;
    for _ in 0..total {
        let report = match scalebio_step(problem, &mut state, schedule, sampler) {
            Ok(r) => r,
            Err(error) => {
                record.rows.push(RunRow::diagnostic(&state, started));
                record.set_final(&state);
                return Err(RunAborted { record, error });
            }
        };
        observer(&state, &report);
        let due = state.step == total || (options.log_every > 0 && state.step % options.log_every == 0);
        if due {
            match log_row(problem, &state, report.lambda_direction.norm(), started) {
                Ok(row) => record.rows.push(row),
                Err(error) => {
                    record.set_final(&state);
                    return Err(RunAborted { record, error });
                }
            }
        }
    }
    record.set_final(&state);
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minimax::{make_partition, PartitionStrategy};
    use crate::problems::{make_quadratic, QuadraticInstance};

    fn full(dim: usize) -> BlockPartition {
        BlockPartition::full(dim).unwrap()
    }

    #[test]
    fn hand_traced_scalar_steps() {
        let q = QuadraticInstance::scalar_example();
        let schedule = Schedule::constant(2, 10.0, 1e-2, 1e-2, 1e-3).unwrap();
        let sampler = SamplerConfig::new(1, 1, 0);
        let mut st = ScaleBiOState::new(&q, Init::zeros(1, 1), full(1), full(1)).unwrap();

        scalebio_step(&q, &mut st, &schedule, &sampler).unwrap();
        // ∇_wL2(0, 0) = 0, ∇_wL1(0) = C(C·0 − y) = −1, ∇_λ terms vanish at w = u = 0.
        assert_eq!(st.u[0], 0.0);
        assert!((st.w[0] - 0.01).abs() < 1e-15);
        assert_eq!(st.lambda[0], 0.0);

        let r = scalebio_step(&q, &mut st, &schedule, &sampler).unwrap();
        // w: −0.99 + 10·(2·0.01) = −0.79 → 0.01 + 0.0079; λ: 10·(−0.01 − 0) = −0.1 → 1e-4.
        assert_eq!(st.u[0], 0.0);
        assert!((st.w[0] - 0.0179).abs() < 1e-15);
        assert!((st.lambda[0] - 1e-4).abs() < 1e-17);
        assert!((r.lambda_direction[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn coincident_w_and_u_differ_by_outer_term() {
        let q = make_quadratic(2, 4, 1.0, 3).unwrap();
        let schedule = Schedule::constant(1, 5.0, 1e-2, 1e-2, 1e-3).unwrap();
        let sampler = SamplerConfig::new(1, 1, 0);
        let init = Init::symmetric(2, 4, 9);
        let mut st = ScaleBiOState::new(&q, init.clone(), full(4), full(4)).unwrap();
        scalebio_step(&q, &mut st, &schedule, &sampler).unwrap();
        let grad_l1 = q.outer(&init.lambda0, &init.w0, None).unwrap().grad_w;
        let diff = &st.u - &st.w;
        let expected = grad_l1 * 1e-2;
        assert!((diff - expected).amax() < 1e-15);
    }

    #[test]
    fn untouched_blocks_are_bit_identical() {
        let q = make_quadratic(3, 7, 1.0, 5).unwrap();
        let schedule = Schedule::constant(50, 3.0, 1e-2, 1e-2, 1e-3).unwrap();
        let sampler = SamplerConfig::new(1, 1, 17);
        let pu = make_partition(7, 3, PartitionStrategy::Contiguous).unwrap();
        let pw = make_partition(7, 2, PartitionStrategy::Strided).unwrap();
        for rule in [UpdateRule::Plain, UpdateRule::Adam(AdamParams::default())] {
            let schedule = schedule.with_rule(rule);
            let mut st = ScaleBiOState::new(&q, Init::symmetric(3, 7, 1), pu.clone(), pw.clone()).unwrap();
            for _ in 0..50 {
                let before = st.clone();
                let r = scalebio_step(&q, &mut st, &schedule, &sampler).unwrap();
                for i in 0..7 {
                    if !pu.block(r.block_u).contains(&i) {
                        assert_eq!(st.u[i].to_bits(), before.u[i].to_bits());
                    }
                    if !pw.block(r.block_w).contains(&i) {
                        assert_eq!(st.w[i].to_bits(), before.w[i].to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn nan_aborts_with_partial_record() {
        let q = QuadraticInstance::scalar_example();
        let schedule = Schedule::constant(10, 10.0, 1e-2, 1e-2, 1e-3).unwrap();
        let mut init = Init::zeros(1, 1);
        init.w0[0] = f64::NAN;
        let err = run(
            &q,
            &schedule,
            &SamplerConfig::new(1, 1, 0),
            full(1),
            full(1),
            init,
            &RunOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err.error, Error::NonFinite { .. }));
        assert!(!err.record.rows.is_empty());
    }

    #[test]
    fn log_cadence_and_final_row() {
        let q = QuadraticInstance::scalar_example();
        let schedule = Schedule::constant(25, 10.0, 1e-2, 1e-2, 1e-3).unwrap();
        let rec = run(
            &q,
            &schedule,
            &SamplerConfig::new(1, 1, 0),
            full(1),
            full(1),
            Init::zeros(1, 1),
            &RunOptions {
                log_every: 10,
                record_time: false,
            },
        )
        .unwrap();
        let steps: Vec<usize> = rec.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 25]);
        assert_eq!(rec.final_lambda.len(), 1);
    }
}
