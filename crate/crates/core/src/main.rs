use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scalebio::harness::{
    cli_run, cli_verify, load_config, run_baseline_compare, CompareOptions, ExperimentConfig, ExperimentReport,
    Preset, VerifyOptions, EXIT_CONFIG, EXIT_FAIL, EXIT_PASS,
};
use scalebio::Error;

#[derive(Parser)]
#[command(name = "scalebio", version, about = "First-order bilevel data reweighting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one preset experiment.
    Run(Common),
    /// Run every oracle and property check.
    Verify(Common),
    /// Compare the first-order solver with second-order baselines.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Preset name: denoise, mixture, quality, hyperclean, quad-verify, baseline-compare.
    #[arg(long)]
    preset: Option<String>,
    /// Log a trajectory row every N steps.
    #[arg(long)]
    log_every: Option<usize>,
}

/// `fixed` is the preset a subcommand always runs; `run` takes it from the flag or the file.
fn resolve(common: &Common, fixed: Option<Preset>) -> Result<ExperimentConfig, Error> {
    let flag = common.preset.as_deref().map(Preset::parse).transpose()?;
    let preset = match (fixed, flag) {
        (Some(f), Some(p)) if p != f => {
            return Err(Error::Config(format!("this subcommand runs {}, not {}", f.name(), p.name())))
        }
        (Some(f), _) => Some(f),
        (None, p) => p,
    };
    let mut cfg = load_config(common.config.as_deref(), preset)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(n) = common.log_every {
        cfg.log_every = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish(result: Result<ExperimentReport, Error>) -> ExitCode {
    match result {
        Ok(report) => {
            print!("{}", report.summary());
            for path in &report.outputs {
                println!("wrote {}", path.display());
            }
            if report.passed() {
                ExitCode::from(EXIT_PASS as u8)
            } else {
                for v in report.failures() {
                    eprintln!("verdict failed: {}", v.name);
                }
                ExitCode::from(EXIT_FAIL as u8)
            }
        }
        Err(Error::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAIL as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => resolve(c, None).and_then(|cfg| cli_run(&cfg)),
        Command::Verify(c) => resolve(c, Some(Preset::QuadVerify)).and_then(|cfg| {
            let mut report = cli_verify(&cfg, &VerifyOptions::default())?;
            report.write_json(&cfg.out.join("report.json"))?;
            Ok(report)
        }),
        Command::Compare(c) => resolve(c, Some(Preset::BaselineCompare)).and_then(|cfg| {
            std::fs::create_dir_all(&cfg.out)?;
            let mut report = run_baseline_compare(&cfg, &CompareOptions::default())?;
            report.write_json(&cfg.out.join("report.json"))?;
            Ok(report)
        }),
    };
    finish(result)
}
