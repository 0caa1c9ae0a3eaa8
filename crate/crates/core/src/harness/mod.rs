//! Experiment presets, configuration, weight plots and the verification report.

mod compare;
mod config;
mod plot;
mod presets;
mod report;
mod verify;

pub use compare::{run_baseline_compare, CompareOptions, RaceResult};
pub use config::{
    load_config, parse_config, ConfigFile, DataSection, ExperimentConfig, ModeName, ModelName, ModelSection,
    PartitionName, Preset, RuleName, ScheduleSection, VerifySection, ENV_PREFIX,
};
pub use plot::{emit_weight_plot, polyline_final_weights, render_weight_plot};
pub use presets::{
    build_hyperclean_problem, build_reweight_problem, hyperclean_datasets, reweight_datasets, run_denoise,
    run_hyperclean, run_mixture, run_quality, run_solver, summarize_weights, top_half,
};
pub use report::{ExperimentReport, Relation, Verdict, WeightSummary};
pub use verify::{
    builtin_problems, cli_verify, run_quad_verify, theorem_scaling, verify_instance, FaultInjection, ScalingPoint,
    VerifyOptions,
};

use crate::error::Result;

/// Exit status: every verdict passed.
pub const EXIT_PASS: i32 = 0;
/// Exit status: at least one verdict failed, or the run itself failed.
pub const EXIT_FAIL: i32 = 1;
/// Exit status: the configuration was rejected.
pub const EXIT_CONFIG: i32 = 2;

/// Runs the preset named in `cfg` and writes `report.json` into `cfg.out`.
pub fn cli_run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    std::fs::create_dir_all(&cfg.out)?;
    let mut report = match cfg.preset {
        Preset::Denoise => run_denoise(cfg)?,
        Preset::Mixture => run_mixture(cfg)?,
        Preset::Quality => run_quality(cfg)?,
        Preset::Hyperclean => run_hyperclean(cfg)?,
        Preset::QuadVerify => run_quad_verify(cfg, &VerifyOptions::default())?,
        Preset::BaselineCompare => run_baseline_compare(cfg, &CompareOptions::default())?,
    };
    report.write_json(&cfg.out.join("report.json"))?;
    Ok(report)
}
