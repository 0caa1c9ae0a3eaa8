use std::time::Instant;

use crate::baselines::{BaselineConfig, HvpOracle, HypergradEstimator, Method};
use crate::error::{Error, Result};
use crate::io::{fmt_float, write_csv};
use crate::minimax::{scalebio_step, BlockPartition, Init, Schedule, ScaleBiOState};
use crate::oracle::QuadraticOracle;
use crate::problems::{BilevelProblem, SamplerConfig, Vector};
use crate::reweight::HyperCleanProblem;

use super::config::ExperimentConfig;
use super::presets::build_hyperclean_problem;
use super::report::{ExperimentReport, Relation, Verdict};
use super::verify::verify_instance;

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    /// Target `‖∇𝓛(λ)‖ ≤ target_fraction · ‖∇𝓛(λ₀)‖`.
    pub target_fraction: f64,
    /// Outer iterations allowed to each baseline.
    pub baseline_iterations: usize,
    /// The solver's budget is its schedule length; its progress is checked this often.
    pub solver_check_every: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            target_fraction: 0.2,
            baseline_iterations: 2000,
            solver_check_every: 10,
        }
    }
}

/// How one method fared against the common target.
#[derive(Debug, Clone, PartialEq)]
pub struct RaceResult {
    pub problem: String,
    pub method: String,
    pub outer_iterations: usize,
    pub reached: bool,
    /// Smallest reference hypergradient norm seen at a checkpoint.
    pub best_grad_norm: f64,
    /// Time spent inside the method's own steps; checkpoints are excluded.
    pub seconds: f64,
}

trait Contender {
    fn advance(&mut self, problem: &dyn BilevelProblem) -> Result<()>;
    fn lambda(&self) -> &Vector;
}

struct SolverRun {
    state: ScaleBiOState,
    schedule: Schedule,
    sampler: SamplerConfig,
}

impl Contender for SolverRun {
    fn advance(&mut self, problem: &dyn BilevelProblem) -> Result<()> {
        scalebio_step(problem, &mut self.state, &self.schedule, &self.sampler).map(|_| ())
    }
    fn lambda(&self) -> &Vector {
        &self.state.lambda
    }
}

struct BaselineRun {
    method: Method,
    lambda: Vector,
    w: Vector,
    step_size: f64,
    call: u64,
}

impl Contender for BaselineRun {
    fn advance(&mut self, problem: &dyn BilevelProblem) -> Result<()> {
        let h = self.method.estimate(problem, &self.lambda, &self.w, self.call)?;
        self.call += 1;
        self.lambda.axpy(-self.step_size, &h.grad, 1.0);
        self.w = h.inner;
        if self.lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "lambda".into(),
                step: self.call as usize,
            });
        }
        Ok(())
    }
    fn lambda(&self) -> &Vector {
        &self.lambda
    }
}

fn race(
    problem_name: &str,
    method: &str,
    problem: &dyn BilevelProblem,
    contender: &mut dyn Contender,
    reference: &dyn Fn(&Vector) -> Result<f64>,
    target: f64,
    iterations: usize,
    check_every: usize,
) -> Result<RaceResult> {
    let mut best = reference(contender.lambda())?;
    let mut seconds = 0.0;
    let mut done = 0;
    while done < iterations && best > target {
        let started = Instant::now();
        let burst = check_every.min(iterations - done);
        for _ in 0..burst {
            contender.advance(problem)?;
        }
        seconds += started.elapsed().as_secs_f64();
        done += burst;
        best = best.min(reference(contender.lambda())?);
    }
    Ok(RaceResult {
        problem: problem_name.into(),
        method: method.into(),
        outer_iterations: done,
        reached: best <= target,
        best_grad_norm: best,
        seconds,
    })
}

fn baseline_methods(problem: &dyn BilevelProblem) -> Vec<Method> {
    let probe = Vector::zeros(problem.dim_w());
    let hvp = if problem.inner_hvp_ww(&Vector::zeros(problem.dim_lambda()), &probe, &probe).is_some() {
        HvpOracle::Analytic
    } else {
        HvpOracle::default()
    };
    let config = BaselineConfig::for_constants(problem.constants(), hvp);
    vec![
        Method::StocBio(config.clone()),
        Method::ConjugateGradient(config.clone()),
        Method::Reverse(config),
    ]
}

#[allow(clippy::too_many_arguments)]
fn race_all(
    problem_name: &str,
    problem: &dyn BilevelProblem,
    reference: &dyn Fn(&Vector) -> Result<f64>,
    schedule: Schedule,
    sampler: SamplerConfig,
    outer_step: f64,
    seed: u64,
    options: &CompareOptions,
) -> Result<Vec<RaceResult>> {
    let (dl, dw) = (problem.dim_lambda(), problem.dim_w());
    let init = Init::symmetric(dl, dw, seed);
    let target = options.target_fraction * reference(&init.lambda0)?;
    let mut results = Vec::new();
    let steps = schedule.total_steps;
    let mut solver = SolverRun {
        state: ScaleBiOState::new(problem, init.clone(), BlockPartition::full(dw)?, BlockPartition::full(dw)?)?,
        schedule,
        sampler,
    };
    results.push(race(
        problem_name,
        "scalebio",
        problem,
        &mut solver,
        reference,
        target,
        steps,
        options.solver_check_every,
    )?);
    for method in baseline_methods(problem) {
        let name = method.name();
        let mut run = BaselineRun {
            method,
            lambda: init.lambda0.clone(),
            w: init.w0.clone(),
            step_size: outer_step,
            call: 0,
        };
        results.push(race(problem_name, name, problem, &mut run, reference, target, options.baseline_iterations, 1)?);
    }
    Ok(results)
}

/// Races the solver against the second-order baselines to a common
/// hypergradient-norm target, on a seeded quadratic and a hyper-cleaning instance.
pub fn run_baseline_compare(cfg: &ExperimentConfig, options: &CompareOptions) -> Result<ExperimentReport> {
    std::fs::create_dir_all(&cfg.out)?;
    let mut results = Vec::new();

    let oracle = QuadraticOracle::new(verify_instance(cfg.seed)?)?;
    let quad = oracle.instance();
    let c = quad.constants();
    let outer_step = 1.0 / oracle.hessian_value().norm();
    let inner_step = 1.0 / (cfg.alpha * c.ell21.unwrap_or(1.0) + c.ell11.unwrap_or(1.0));
    // λ may contract no faster than the inner iterates do.
    let solver_outer_step = outer_step.min(cfg.alpha * c.mu2 * inner_step);
    let schedule = Schedule::constant(cfg.steps, cfg.alpha, inner_step, inner_step, solver_outer_step)?;
    let reference = |l: &Vector| Ok(oracle.grad_value(l)?.norm());
    results.extend(race_all(
        "quadratic",
        quad,
        &reference,
        schedule,
        SamplerConfig::new(1, 1, cfg.seed),
        outer_step,
        cfg.seed,
        options,
    )?);

    let hc: HyperCleanProblem = build_hyperclean_problem(cfg)?;
    let reference = |l: &Vector| Ok(hc.exact_hypergrad(l)?.norm());
    results.extend(race_all(
        "hyperclean",
        &hc,
        &reference,
        cfg.schedule()?,
        SamplerConfig::new(cfg.batch_train, cfg.batch_val, cfg.seed),
        cfg.eta_lambda,
        cfg.seed,
        options,
    )?);

    let mut report = ExperimentReport::new(cfg.preset.name(), cfg.seed);
    let header: Vec<String> = ["problem", "method", "outer_iterations", "reached", "best_grad_norm"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.problem.clone(),
                r.method.clone(),
                r.outer_iterations.to_string(),
                r.reached.to_string(),
                fmt_float(r.best_grad_norm),
            ]
        })
        .collect();
    let path = cfg.out.join("baseline_compare.csv");
    write_csv(&path, &header, &rows)?;
    report.outputs.push(path);
    for r in &results {
        report.metric(&format!("{}_{}_seconds", r.problem, r.method), r.seconds);
        report.metric(&format!("{}_{}_iterations", r.problem, r.method), r.outer_iterations as f64);
    }

    let find = |method: &str| results.iter().find(|r| r.problem == "hyperclean" && r.method == method);
    if let Some(solver) = find("scalebio") {
        report.push(Verdict::check(
            "hyperclean scalebio reached target",
            if solver.reached { 1.0 } else { 0.0 },
            Relation::Equal,
            1.0,
        ));
        for method in ["cg", "reverse"] {
            if let Some(other) = find(method) {
                // A baseline that never reaches the target is charged infinite time.
                let theirs = if other.reached { other.seconds } else { f64::INFINITY };
                report.push(Verdict::check(
                    format!("hyperclean time ratio scalebio/{method}"),
                    solver.seconds / theirs,
                    Relation::LessEq,
                    1.0,
                ));
            }
        }
    }
    Ok(report)
}
