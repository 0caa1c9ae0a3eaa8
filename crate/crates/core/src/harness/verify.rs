use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::io::{fmt_float, write_csv};
use crate::minimax::{run_with_observer, BlockPartition, Init, RunOptions, Schedule};
use crate::oracle::{
    curvature_probe, finite_diff_grad, fit_loglog_slope, gradient_check, ift_hypergrad, penalty_gap_scan,
    relative_error, strong_convexity_probe, wstar_alpha_distance_check, ConvexityStatus, QuadraticOracle, StepRule,
};
use crate::problems::{
    BatchHandle, BilevelProblem, Evaluation, ProblemConstants, QuadraticInstance, QuadraticSpec, SamplerConfig, Vector,
};
use crate::reweight::ModelKind;
use crate::rng::{keyed, Stream};

use super::config::{ExperimentConfig, Preset};
use super::presets::{build_hyperclean_problem, build_reweight_problem};
use super::report::{ExperimentReport, Relation, Verdict};

/// Penalties for the `w*^α` distance bound.
const DISTANCE_ALPHAS: [f64; 4] = [10.0, 1e2, 1e3, 1e4];
const DISTANCE_POINTS: usize = 20;
/// Penalties over which the Hessian of `Γ^α` should stay put.
const HESSIAN_ALPHAS: [f64; 3] = [1e2, 1e3, 1e4];
const CURVATURE_TRIALS: usize = 100;
const CONVEXITY_SEGMENTS: usize = 100;
const INVARIANT_POINTS: usize = 10;
const GRADIENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub fault: Option<FaultInjection>,
}

/// Test hook that breaks a problem on purpose so the sweep has something to catch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultInjection {
    /// Scales `∇_w L2` by 1.01.
    CorruptInnerGradient,
}

struct Faulty<P> {
    inner: P,
    fault: FaultInjection,
}

impl<P: BilevelProblem> BilevelProblem for Faulty<P> {
    fn dim_lambda(&self) -> usize {
        self.inner.dim_lambda()
    }
    fn dim_w(&self) -> usize {
        self.inner.dim_w()
    }
    fn constants(&self) -> &ProblemConstants {
        self.inner.constants()
    }
    fn outer(&self, lambda: &Vector, w: &Vector, batch: Option<&BatchHandle>) -> Result<Evaluation> {
        self.inner.outer(lambda, w, batch)
    }
    fn inner(&self, lambda: &Vector, w: &Vector, batch: Option<&BatchHandle>) -> Result<Evaluation> {
        let mut ev = self.inner.inner(lambda, w, batch)?;
        match self.fault {
            FaultInjection::CorruptInnerGradient => ev.grad_w *= 1.01,
        }
        Ok(ev)
    }
    fn inner_strongly_convex(&self) -> bool {
        self.inner.inner_strongly_convex()
    }
}

/// Outcome of one theoretical-schedule run of length `steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPoint {
    pub steps: usize,
    pub alpha: f64,
    /// `min_{k≤K} ‖∇𝓛(λ_k)‖²`.
    pub min_grad_norm_sq: f64,
    /// `‖∇𝓛(λ_K)‖²`.
    pub final_grad_norm_sq: f64,
}

/// Runs the solver with the theoretical schedule for each `K` in `steps`
/// (deterministic, `J = 1`) and tracks the true hypergradient norm.
pub fn theorem_scaling(
    oracle: &QuadraticOracle,
    steps: &[usize],
    eta0: f64,
    eta0_lambda: f64,
    seed: u64,
) -> Result<Vec<ScalingPoint>> {
    let problem = oracle.instance();
    let (dl, dw) = (problem.dim_lambda(), problem.dim_w());
    let sampler = SamplerConfig::new(1, 1, seed);
    let options = RunOptions { log_every: 0, record_time: false };
    let mut points = Vec::with_capacity(steps.len());
    for &k in steps {
        let schedule = Schedule::theoretical(k, eta0, eta0_lambda)?;
        let init = Init::symmetric(dl, dw, seed);
        let start = oracle.grad_value(&init.lambda0)?.norm_squared();
        let mut best = start;
        let mut last = start;
        let mut failure = None;
        let outcome = run_with_observer(
            problem,
            &schedule,
            &sampler,
            BlockPartition::full(dw)?,
            BlockPartition::full(dw)?,
            init,
            &options,
            |state, _| {
                if failure.is_some() {
                    return;
                }
                match oracle.grad_value(&state.lambda) {
                    Ok(g) => {
                        last = g.norm_squared();
                        best = best.min(last);
                    }
                    Err(e) => failure = Some(e),
                }
            },
        );
        if let Err(aborted) = outcome {
            return Err(aborted.error);
        }
        if let Some(e) = failure {
            return Err(e);
        }
        points.push(ScalingPoint {
            steps: k,
            alpha: schedule.alpha,
            min_grad_norm_sq: best,
            final_grad_norm_sq: last,
        });
    }
    Ok(points)
}

/// The seeded quadratic every verify check runs on.
pub fn verify_instance(seed: u64) -> Result<QuadraticInstance> {
    QuadraticSpec::new(3, 5, 1.0, seed).build()
}

fn probe_lambda(seed: u64, counter: u64, dim: usize) -> Vector {
    let mut rng = keyed(seed, Stream::Probe, counter);
    Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Records `f`'s verdicts, or a single failing verdict named `name` if it errors.
fn guarded(report: &mut ExperimentReport, name: &str, f: impl FnOnce(&mut ExperimentReport) -> Result<()>) {
    if let Err(e) = f(report) {
        report.push(Verdict::error(name, &e));
    }
}

/// Penalty-gap rates, curvature probe, closed-form invariants and the
/// theoretical-schedule scaling run on a seeded quadratic.
pub fn run_quad_verify(cfg: &ExperimentConfig, _options: &VerifyOptions) -> Result<ExperimentReport> {
    std::fs::create_dir_all(&cfg.out)?;
    let oracle = QuadraticOracle::new(verify_instance(cfg.seed)?)?;
    let instance = oracle.instance();
    let constants = instance.constants().clone();
    let dl = instance.dim_lambda();
    let lambda = probe_lambda(cfg.seed, 0, dl);
    let mut report = ExperimentReport::new(cfg.preset.name(), cfg.seed);

    guarded(&mut report, "penalty gap scan", |r| {
        let scan = penalty_gap_scan(&oracle, &lambda, &cfg.alphas)?;
        let path = cfg.out.join("penalty_gaps.csv");
        scan.write_csv(&path)?;
        r.outputs.push(path);
        for (name, slope) in [("value gap slope", scan.value_slope), ("gradient gap slope", scan.grad_slope)] {
            r.push(Verdict::check(name, slope, Relation::GreaterEq, -1.15));
            r.push(Verdict::check(name, slope, Relation::LessEq, -0.85));
        }
        Ok(())
    });

    guarded(&mut report, "w*^α distance bound", |r| {
        let mut worst = 0.0_f64;
        for k in 0..DISTANCE_POINTS {
            let l = probe_lambda(cfg.seed, 1 + k as u64, dl);
            for row in wstar_alpha_distance_check(&oracle, &l, &DISTANCE_ALPHAS)? {
                worst = worst.max(row.distance / row.bound);
            }
        }
        r.push(Verdict::check("w*^α distance / (C0/α)", worst, Relation::LessEq, 1.05));
        Ok(())
    });

    guarded(&mut report, "curvature probe", |r| {
        let alpha = 2.0 * constants.alpha_threshold().unwrap_or(f64::NAN);
        let probe = curvature_probe(instance, &lambda, alpha, CURVATURE_TRIALS, cfg.seed)?;
        r.push(Verdict::check(
            "strong concavity violations in u",
            probe.concavity_violations as f64,
            Relation::Equal,
            0.0,
        ));
        let convex = match probe.convexity {
            ConvexityStatus::Checked { violations } => violations as f64,
            ConvexityStatus::Skipped(_) => f64::NAN,
        };
        r.push(Verdict::check("strong convexity violations in w", convex, Relation::Equal, 0.0));
        Ok(())
    });

    guarded(&mut report, "closed-form invariants", |r| {
        let (mut envelope, mut order, mut ift) = (0.0_f64, 0.0_f64, 0.0_f64);
        for k in 0..INVARIANT_POINTS {
            let l = probe_lambda(cfg.seed, 100 + k as u64, dl);
            let value = oracle.value(&l)?;
            for &alpha in &cfg.alphas {
                let w = oracle.w_star_alpha(&l, alpha)?;
                let u = oracle.u_star(&l)?;
                let partial = oracle.penalized_grad_lambda(&l, &w, &u, alpha)?;
                envelope = envelope.max((partial - oracle.grad_gamma(&l, alpha)?).amax());
                order = order.max(oracle.gamma(&l, alpha)? - value);
            }
            let fd = finite_diff_grad(|x| oracle.value(x).unwrap_or(f64::NAN), &l, StepRule::Auto)?;
            ift = ift.max(relative_error(&ift_hypergrad(&oracle, &l)?, &fd, 1e-6));
        }
        r.push(Verdict::check("envelope identity error", envelope, Relation::Less, 1e-8));
        r.push(Verdict::check("max Γ^α − 𝓛", order, Relation::LessEq, 0.0));
        r.push(Verdict::check("hypergradient vs finite differences", ift, Relation::Less, 1e-7));
        Ok(())
    });

    guarded(&mut report, "Γ^α Hessian", |r| {
        let norms = HESSIAN_ALPHAS
            .iter()
            .map(|&a| Ok(oracle.hessian_gamma(a)?.norm()))
            .collect::<Result<Vec<f64>>>()?;
        let hi = norms.iter().copied().fold(f64::MIN, f64::max);
        let lo = norms.iter().copied().fold(f64::MAX, f64::min);
        r.push(Verdict::check("Γ^α Hessian spread across α", (hi - lo) / hi, Relation::Less, 0.1));
        Ok(())
    });

    guarded(&mut report, "theoretical schedule scaling", |r| {
        let schedule = Schedule::theoretical(cfg.theorem_steps[0], cfg.eta0, cfg.eta0_lambda)?;
        let holds = schedule.check_theorem_conditions(&constants, 1).is_ok();
        r.metric("theorem_step_conditions_hold", if holds { 1.0 } else { 0.0 });
        let points = theorem_scaling(&oracle, &cfg.theorem_steps, cfg.eta0, cfg.eta0_lambda, cfg.seed)?;
        let path = cfg.out.join("theorem_scaling.csv");
        let header: Vec<String> =
            ["steps", "alpha", "min_grad_norm_sq", "final_grad_norm_sq"].iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<String>> = points
            .iter()
            .map(|p| {
                vec![
                    p.steps.to_string(),
                    fmt_float(p.alpha),
                    fmt_float(p.min_grad_norm_sq),
                    fmt_float(p.final_grad_norm_sq),
                ]
            })
            .collect();
        write_csv(&path, &header, &rows)?;
        r.outputs.push(path);
        let worst_ratio = points
            .windows(2)
            .map(|p| p[1].min_grad_norm_sq / p[0].min_grad_norm_sq)
            .fold(0.0_f64, f64::max);
        if points.len() > 1 {
            r.push(Verdict::check("min ‖∇𝓛‖² ratio between runs", worst_ratio, Relation::Less, 1.0));
            let xs: Vec<f64> = points.iter().map(|p| p.steps as f64).collect();
            let ys: Vec<f64> = points.iter().map(|p| p.min_grad_norm_sq).collect();
            r.push(Verdict::check("min ‖∇𝓛‖² log-log slope", fit_loglog_slope(&xs, &ys)?, Relation::LessEq, -0.1));
        }
        if let Some(last) = points.last() {
            r.push(Verdict::check("final ‖∇𝓛‖²", last.final_grad_norm_sq, Relation::Less, 1e-3));
        }
        Ok(())
    });

    Ok(report)
}

/// Small instances of every built-in problem, for the gradient-check sweep.
pub fn builtin_problems(seed: u64) -> Result<Vec<(String, Box<dyn BilevelProblem>)>> {
    let small = |preset: Preset, kind: ModelKind, sizes: Vec<usize>| {
        let mut c = ExperimentConfig::defaults(preset);
        c.seed = seed;
        c.model = kind;
        c.feature_dim = 4;
        c.sizes = sizes;
        c.val_size = 30;
        c
    };
    let mut out: Vec<(String, Box<dyn BilevelProblem>)> = vec![("quadratic".into(), Box::new(verify_instance(seed)?))];
    for (name, kind) in [
        ("linear", ModelKind::LinearRegression),
        ("logistic", ModelKind::LogisticRegression),
        ("mlp1", ModelKind::Mlp1 { hidden: 3 }),
    ] {
        let c = small(Preset::Quality, kind, vec![20, 20]);
        out.push((format!("source reweighting ({name})"), Box::new(build_reweight_problem(&c)?)));
        let c = small(Preset::Hyperclean, kind, vec![20]);
        out.push((format!("hyper-cleaning ({name})"), Box::new(build_hyperclean_problem(&c)?)));
    }
    Ok(out)
}

/// Everything in [`run_quad_verify`] plus a gradient check and, where
/// the inner problem is convex, a strong-convexity probe on every built-in problem.
pub fn cli_verify(cfg: &ExperimentConfig, options: &VerifyOptions) -> Result<ExperimentReport> {
    let mut report = run_quad_verify(cfg, options)?;
    for (name, base) in builtin_problems(cfg.seed)? {
        let problem: Box<dyn BilevelProblem + '_> = match options.fault {
            Some(fault) => Box::new(Faulty { inner: base.as_ref(), fault }),
            None => Box::new(base.as_ref()),
        };
        guarded(&mut report, &format!("gradient check [{name}]"), |r| {
            for check in gradient_check(problem.as_ref(), cfg.gradient_points, 1.0, cfg.seed)? {
                r.push(Verdict::check(
                    format!("gradient {} [{name}]", check.name),
                    check.max_rel_error,
                    Relation::Less,
                    GRADIENT_TOLERANCE,
                ));
            }
            if problem.inner_strongly_convex() {
                let violations = strong_convexity_probe(problem.as_ref(), CONVEXITY_SEGMENTS, 1.0, cfg.seed)?;
                r.push(Verdict::check(
                    format!("inner strong convexity violations [{name}]"),
                    violations as f64,
                    Relation::Equal,
                    0.0,
                ));
            }
            Ok(())
        });
    }
    Ok(report)
}
