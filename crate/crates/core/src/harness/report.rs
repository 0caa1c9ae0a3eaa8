use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Less,
    #[serde(rename = "<=")]
    LessEq,
    #[serde(rename = ">")]
    Greater,
    #[serde(rename = ">=")]
    GreaterEq,
    #[serde(rename = "==")]
    Equal,
}

impl Relation {
    fn holds(self, measured: f64, threshold: f64) -> bool {
        match self {
            Relation::Less => measured < threshold,
            Relation::LessEq => measured <= threshold,
            Relation::Greater => measured > threshold,
            Relation::GreaterEq => measured >= threshold,
            Relation::Equal => measured == threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Less => "<",
            Relation::LessEq => "<=",
            Relation::Greater => ">",
            Relation::GreaterEq => ">=",
            Relation::Equal => "==",
        }
    }
}

/// One named check: `measured relation threshold`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub measured: f64,
    pub relation: Relation,
    pub threshold: f64,
    pub pass: bool,
}

impl Verdict {
    pub fn check(name: impl Into<String>, measured: f64, relation: Relation, threshold: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            relation,
            threshold,
            pass: relation.holds(measured, threshold),
        }
    }

    /// A check that could not be evaluated; always a failure.
    pub fn error(name: impl Into<String>, err: &Error) -> Self {
        Self {
            name: format!("{}: {err}", name.into()),
            measured: f64::NAN,
            relation: Relation::Equal,
            threshold: 0.0,
            pass: false,
        }
    }
}

/// Quantiles of per-example weights, split by ground-truth corruption.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSummary {
    pub median_clean: f64,
    pub median_corrupted: f64,
    pub mean_clean: f64,
    pub mean_corrupted: f64,
}

/// Outcome of one preset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub preset: String,
    pub seed: u64,
    pub verdicts: Vec<Verdict>,
    pub final_weights: Option<Vec<f64>>,
    pub weight_summary: Option<WeightSummary>,
    /// Additional measurements (timings, slopes) keyed by name.
    pub metrics: BTreeMap<String, f64>,
    pub outputs: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn new(preset: &str, seed: u64) -> Self {
        Self {
            preset: preset.to_string(),
            seed,
            verdicts: Vec::new(),
            final_weights: None,
            weight_summary: None,
            metrics: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        !self.verdicts.is_empty() && self.verdicts.iter().all(|v| v.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.pass)
    }

    pub fn push(&mut self, v: Verdict) {
        self.verdicts.push(v);
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&mut self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.outputs.push(path.to_path_buf());
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    /// One line per verdict, for terminals.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for v in &self.verdicts {
            s.push_str(&format!(
                "[{}] {}: {:.6e} {} {:.6e}\n",
                if v.pass { "pass" } else { "FAIL" },
                v.name,
                v.measured,
                v.relation.symbol(),
                v.threshold
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_relations() {
        assert!(Verdict::check("a", 0.01, Relation::Less, 0.05).pass);
        assert!(!Verdict::check("a", 0.05, Relation::Less, 0.05).pass);
        assert!(Verdict::check("a", 0.05, Relation::LessEq, 0.05).pass);
        assert!(!Verdict::check("a", f64::NAN, Relation::Greater, 0.0).pass);
    }

    #[test]
    fn report_passes_only_when_all_pass() {
        let mut r = ExperimentReport::new("x", 0);
        assert!(!r.passed());
        r.push(Verdict::check("a", 1.0, Relation::Greater, 0.0));
        assert!(r.passed());
        r.push(Verdict::check("b", 1.0, Relation::Less, 0.0));
        assert!(!r.passed());
        assert_eq!(r.failures().count(), 1);
        let json = r.to_json();
        assert!(json.contains("\"relation\": \"<\""));
        assert!(r.summary().contains("[FAIL] b"));
    }
}
