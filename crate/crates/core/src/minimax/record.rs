use std::path::Path;
use std::time::Instant;

use super::solver::ScaleBiOState;
use crate::error::Result;
use crate::io::{fmt_float, write_csv};
use crate::problems::Vector;

/// One logged state.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub step: usize,
    pub lambda: Vector,
    /// Mixture weights, for reweighting problems.
    pub p: Option<Vector>,
    /// Full-batch `L1(λ, w)`.
    pub loss_val: f64,
    /// Full-batch `L2(λ, w)`.
    pub loss_trn: f64,
    /// Norm of the `λ` update direction of the step that produced this row.
    pub lambda_update_norm: f64,
    pub elapsed_seconds: Option<f64>,
}

impl RunRow {
    pub(crate) fn diagnostic(state: &ScaleBiOState, started: Option<Instant>) -> Self {
        Self {
            step: state.step + 1,
            lambda: state.lambda.clone(),
            p: None,
            loss_val: f64::NAN,
            loss_trn: f64::NAN,
            lambda_update_norm: f64::NAN,
            elapsed_seconds: started.map(|t| t.elapsed().as_secs_f64()),
        }
    }
}

/// Logged trajectory plus the final iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dim_lambda: usize,
    pub has_weights: bool,
    pub rows: Vec<RunRow>,
    pub final_lambda: Vector,
    pub final_w: Vector,
    pub final_u: Vector,
}

impl RunRecord {
    pub fn empty(dim_lambda: usize, has_weights: bool) -> Self {
        Self {
            dim_lambda,
            has_weights,
            rows: Vec::new(),
            final_lambda: Vector::zeros(0),
            final_w: Vector::zeros(0),
            final_u: Vector::zeros(0),
        }
    }

    pub(crate) fn set_final(&mut self, state: &ScaleBiOState) {
        self.final_lambda = state.lambda.clone();
        self.final_w = state.w.clone();
        self.final_u = state.u.clone();
    }

    pub fn last(&self) -> Option<&RunRow> {
        self.rows.last()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["step".to_string()];
        h.extend((0..self.dim_lambda).map(|i| format!("lambda_{i}")));
        if self.has_weights {
            h.extend((0..self.dim_lambda).map(|i| format!("p_{i}")));
        }
        h.extend(
            ["loss_val", "loss_trn", "lambda_update_norm", "elapsed_seconds"]
                .iter()
                .map(|s| s.to_string()),
        );
        h
    }

    /// CSV rows. Without `include_time` the `elapsed_seconds` column is left
    /// empty so identical runs produce identical files.
    pub fn csv_rows(&self, include_time: bool) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut row = vec![r.step.to_string()];
                row.extend(r.lambda.iter().map(|&v| fmt_float(v)));
                if self.has_weights {
                    match &r.p {
                        Some(p) => row.extend(p.iter().map(|&v| fmt_float(v))),
                        None => row.extend((0..self.dim_lambda).map(|_| fmt_float(f64::NAN))),
                    }
                }
                row.push(fmt_float(r.loss_val));
                row.push(fmt_float(r.loss_trn));
                row.push(fmt_float(r.lambda_update_norm));
                row.push(match (include_time, r.elapsed_seconds) {
                    (true, Some(t)) => fmt_float(t),
                    _ => String::new(),
                });
                row
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path, include_time: bool) -> Result<()> {
        write_csv(path, &self.header(), &self.csv_rows(include_time))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut rec = RunRecord::empty(2, true);
        rec.rows.push(RunRow {
            step: 0,
            lambda: Vector::from_vec(vec![0.0, 0.5]),
            p: Some(Vector::from_vec(vec![0.4, 0.6])),
            loss_val: 1.0,
            loss_trn: 2.0,
            lambda_update_norm: 0.0,
            elapsed_seconds: Some(0.25),
        });
        assert_eq!(
            rec.header().join(","),
            "step,lambda_0,lambda_1,p_0,p_1,loss_val,loss_trn,lambda_update_norm,elapsed_seconds"
        );
        let rows = rec.csv_rows(false);
        assert_eq!(rows[0].len(), 9);
        assert_eq!(rows[0][8], "");
        assert_eq!(rec.csv_rows(true)[0][8], fmt_float(0.25));
        assert_eq!(RunRecord::empty(3, false).header().len(), 8);
    }
}
