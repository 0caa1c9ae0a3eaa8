use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::minimax::{AdamParams, PartitionStrategy, Schedule, UpdateRule};
use crate::reweight::{ModelKind, DEFAULT_HIDDEN, DEFAULT_RIDGE};

/// Prefix of environment variables that override config keys.
/// `SCALEBIO_SEED=3` sets `seed`; `SCALEBIO_SCHEDULE__STEPS=500` sets `schedule.steps`.
pub const ENV_PREFIX: &str = "SCALEBIO_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Denoise,
    Mixture,
    Quality,
    Hyperclean,
    QuadVerify,
    BaselineCompare,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Denoise,
        Preset::Mixture,
        Preset::Quality,
        Preset::Hyperclean,
        Preset::QuadVerify,
        Preset::BaselineCompare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Denoise => "denoise",
            Preset::Mixture => "mixture",
            Preset::Quality => "quality",
            Preset::Hyperclean => "hyperclean",
            Preset::QuadVerify => "quad-verify",
            Preset::BaselineCompare => "baseline-compare",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Linear,
    Logistic,
    Mlp1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleName {
    Plain,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Constant,
    Theoretical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionName {
    Contiguous,
    Strided,
    Singleton,
}

/// On-disk layout. Every key is optional; missing keys take preset defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub log_every: Option<usize>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: Option<ModelName>,
    pub hidden: Option<usize>,
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub mode: Option<ModeName>,
    pub steps: Option<usize>,
    pub alpha: Option<f64>,
    pub eta_lambda: Option<f64>,
    /// Step size of both `w` and `u`.
    pub eta_model: Option<f64>,
    pub eta0: Option<f64>,
    pub eta0_lambda: Option<f64>,
    pub rule: Option<RuleName>,
    pub blocks_u: Option<usize>,
    pub blocks_w: Option<usize>,
    pub partition: Option<PartitionName>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub feature_dim: Option<usize>,
    pub sizes: Option<Vec<usize>>,
    pub val_size: Option<usize>,
    pub corruption: Option<f64>,
    pub mixture: Option<Vec<f64>>,
    pub batch_train: Option<usize>,
    pub batch_val: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub alphas: Option<Vec<f64>>,
    pub theorem_steps: Option<Vec<usize>>,
    pub gradient_points: Option<usize>,
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub seed: u64,
    pub out: PathBuf,
    pub log_every: usize,
    pub model: ModelKind,
    pub ridge: f64,
    pub mode: ModeName,
    pub steps: usize,
    pub alpha: f64,
    pub eta_lambda: f64,
    pub eta_model: f64,
    pub eta0: f64,
    pub eta0_lambda: f64,
    pub rule: UpdateRule,
    pub blocks_u: usize,
    pub blocks_w: usize,
    pub partition: PartitionStrategy,
    pub feature_dim: usize,
    /// Training examples per source.
    pub sizes: Vec<usize>,
    pub val_size: usize,
    /// Label-corruption fraction (hyperclean) or of the low-quality source (quality).
    pub corruption: f64,
    /// Validation composition across generating distributions (mixture).
    pub mixture: Vec<f64>,
    pub batch_train: usize,
    pub batch_val: usize,
    pub alphas: Vec<f64>,
    pub theorem_steps: Vec<usize>,
    pub gradient_points: usize,
}

impl ExperimentConfig {
    /// Preset defaults before any file, environment or flag overrides.
    pub fn defaults(preset: Preset) -> Self {
        let base = Self {
            preset,
            seed: 0,
            out: PathBuf::from("runs").join(preset.name()),
            log_every: 100,
            model: ModelKind::LogisticRegression,
            ridge: DEFAULT_RIDGE,
            mode: ModeName::Constant,
            steps: 3000,
            alpha: 100.0,
            eta_lambda: 1e-2,
            eta_model: 1e-2,
            eta0: 1.0,
            eta0_lambda: 1.0,
            rule: UpdateRule::Adam(AdamParams::default()),
            blocks_u: 1,
            blocks_w: 1,
            partition: PartitionStrategy::Contiguous,
            feature_dim: 10,
            sizes: vec![1000, 9000],
            val_size: 1000,
            corruption: 0.0,
            mixture: vec![0.6, 0.4],
            batch_train: 64,
            batch_val: 64,
            alphas: vec![10.0, 20.0, 40.0, 80.0, 160.0],
            theorem_steps: vec![1000, 10_000, 100_000],
            gradient_points: 20,
        };
        match preset {
            Preset::Denoise => base,
            Preset::QuadVerify => Self {
                eta0: 5.0,
                eta0_lambda: 5.0,
                ..base
            },
            Preset::Mixture => Self {
                model: ModelKind::LinearRegression,
                sizes: vec![1000, 1000],
                rule: UpdateRule::Plain,
                eta_model: 5e-3,
                ..base
            },
            Preset::Quality => Self {
                corruption: 0.5,
                ..base
            },
            Preset::Hyperclean => Self {
                steps: 10_000,
                sizes: vec![300],
                val_size: 300,
                corruption: 0.3,
                batch_train: 300,
                batch_val: 300,
                ..base
            },
            Preset::BaselineCompare => Self {
                steps: 10_000,
                eta_lambda: 0.1,
                sizes: vec![300],
                val_size: 300,
                corruption: 0.3,
                batch_train: 300,
                batch_val: 300,
                ..base
            },
        }
    }

    pub fn schedule(&self) -> Result<Schedule> {
        let s = match self.mode {
            ModeName::Constant => Schedule::constant(self.steps, self.alpha, self.eta_model, self.eta_model, self.eta_lambda)?,
            ModeName::Theoretical => Schedule::theoretical(self.steps, self.eta0, self.eta0_lambda)?,
        };
        Ok(s.with_rule(self.rule))
    }

    /// Resolves a parsed file over the defaults of its preset. `preset`
    /// overrides the file's own preset key.
    pub fn resolve(file: ConfigFile, preset: Option<Preset>) -> Result<Self> {
        let preset = preset
            .or(file.preset)
            .ok_or_else(|| Error::Config("no preset given (use --preset or the 'preset' key)".into()))?;
        let mut c = Self::defaults(preset);
        fn set_t<T>(dst: &mut T, src: Option<T>) {
            if let Some(v) = src {
                *dst = v;
            }
        }
        set_t(&mut c.seed, file.seed);
        set_t(&mut c.out, file.out);
        set_t(&mut c.log_every, file.log_every);

        let m = file.model;
        let hidden = m.hidden.unwrap_or(DEFAULT_HIDDEN);
        if let Some(kind) = m.kind {
            c.model = match kind {
                ModelName::Linear => ModelKind::LinearRegression,
                ModelName::Logistic => ModelKind::LogisticRegression,
                ModelName::Mlp1 => ModelKind::Mlp1 { hidden },
            };
        } else if let (ModelKind::Mlp1 { .. }, Some(h)) = (c.model, m.hidden) {
            c.model = ModelKind::Mlp1 { hidden: h };
        }
        set_t(&mut c.ridge, m.ridge);

        let s = file.schedule;
        set_t(&mut c.mode, s.mode);
        set_t(&mut c.steps, s.steps);
        set_t(&mut c.alpha, s.alpha);
        set_t(&mut c.eta_lambda, s.eta_lambda);
        set_t(&mut c.eta_model, s.eta_model);
        set_t(&mut c.eta0, s.eta0);
        set_t(&mut c.eta0_lambda, s.eta0_lambda);
        if let Some(r) = s.rule {
            c.rule = match r {
                RuleName::Plain => UpdateRule::Plain,
                RuleName::Adam => UpdateRule::Adam(AdamParams::default()),
            };
        }
        set_t(&mut c.blocks_u, s.blocks_u);
        set_t(&mut c.blocks_w, s.blocks_w);
        if let Some(p) = s.partition {
            c.partition = match p {
                PartitionName::Contiguous => PartitionStrategy::Contiguous,
                PartitionName::Strided => PartitionStrategy::Strided,
                PartitionName::Singleton => PartitionStrategy::Singleton,
            };
        }

        let d = file.data;
        set_t(&mut c.feature_dim, d.feature_dim);
        set_t(&mut c.sizes, d.sizes);
        set_t(&mut c.val_size, d.val_size);
        set_t(&mut c.corruption, d.corruption);
        set_t(&mut c.mixture, d.mixture);
        set_t(&mut c.batch_train, d.batch_train);
        set_t(&mut c.batch_val, d.batch_val);

        let v = file.verify;
        set_t(&mut c.alphas, v.alphas);
        set_t(&mut c.theorem_steps, v.theorem_steps);
        set_t(&mut c.gradient_points, v.gradient_points);

        c.validate()?;
        Ok(c)
    }

    /// Schema checks that do not depend on running anything.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.steps == 0 {
            return bad("schedule.steps must be at least 1".into());
        }
        for (name, v) in [
            ("schedule.alpha", self.alpha),
            ("schedule.eta_lambda", self.eta_lambda),
            ("schedule.eta_model", self.eta_model),
            ("schedule.eta0", self.eta0),
            ("schedule.eta0_lambda", self.eta0_lambda),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.ridge > 0.0) {
            return bad(format!("model.ridge must be positive, got {}", self.ridge));
        }
        if self.blocks_u == 0 || self.blocks_w == 0 {
            return bad("schedule.blocks_u and schedule.blocks_w must be at least 1".into());
        }
        if self.feature_dim == 0 || self.val_size == 0 {
            return bad("data.feature_dim and data.val_size must be at least 1".into());
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return bad("data.sizes must list positive source sizes".into());
        }
        if !(0.0..=1.0).contains(&self.corruption) {
            return bad(format!("data.corruption must lie in [0, 1], got {}", self.corruption));
        }
        if self.mixture.iter().any(|v| !(*v >= 0.0)) || (self.mixture.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("data.mixture must be nonnegative and sum to 1".into());
        }
        if self.batch_train == 0 || self.batch_val == 0 {
            return bad("data.batch_train and data.batch_val must be at least 1".into());
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0)) {
            return bad("verify.alphas must be positive".into());
        }
        if self.theorem_steps.is_empty() || self.theorem_steps.contains(&0) {
            return bad("verify.theorem_steps must be positive".into());
        }
        let sources = match self.preset {
            Preset::Denoise | Preset::Mixture | Preset::Quality => Some(2),
            Preset::Hyperclean | Preset::BaselineCompare => Some(1),
            Preset::QuadVerify => None,
        };
        if let Some(n) = sources {
            if self.sizes.len() != n {
                return bad(format!("preset {} expects {n} entries in data.sizes", self.preset.name()));
            }
        }
        if self.preset == Preset::Mixture && self.mixture.len() != 2 {
            return bad("mixture preset expects two entries in data.mixture".into());
        }
        Ok(())
    }
}

/// Parses config text, applies `SCALEBIO_*` overrides from `env`, and resolves.
pub fn parse_config(
    text: &str,
    env: impl IntoIterator<Item = (String, String)>,
    preset: Option<Preset>,
) -> Result<ExperimentConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    apply_env(&mut table, env)?;
    let file: ConfigFile = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    ExperimentConfig::resolve(file, preset)
}

/// Reads `path` (or an empty config when `None`) with process-environment overrides.
pub fn load_config(path: Option<&Path>, preset: Option<Preset>) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    parse_config(&text, std::env::vars(), preset)
}

fn apply_env(table: &mut toml::Table, env: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut pairs: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    pairs.sort();
    for (key, raw) in pairs {
        let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("malformed override variable {key}")));
        }
        // Values parse as TOML when possible (numbers, arrays); otherwise as strings.
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.clone()));
        let (last, parents) = path.split_last().expect("non-empty path");
        let mut cursor = &mut *table;
        for p in parents {
            let entry = cursor
                .entry(p.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cursor = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override {key} targets a non-table key")))?;
        }
        cursor.insert(last.clone(), value);
    }
    Ok(())
}
