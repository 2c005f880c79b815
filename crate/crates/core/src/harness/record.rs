use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::RunConfig;

pub const CSV_HEADER: &str = "step,loss,grad_norm,update_norm,param_norm,lr,effective_lr,d_t,step_time_ns";

/// One logged step. `loss` and `grad_norm` are measured before the step,
/// the norms of the update and parameters after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub step: u64,
    pub loss: f64,
    /// Global norm before clipping.
    pub grad_norm: f64,
    pub update_norm: f64,
    pub param_norm: f64,
    pub lr: f64,
    pub effective_lr: f64,
    pub d_t: Option<f64>,
    /// Zero unless timing was requested.
    pub step_time_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub optimizer: String,
    pub problem: String,
    pub steps: u64,
    pub steps_completed: u64,
    /// Full loss at the starting point.
    pub initial_loss: f64,
    /// Full loss at the evaluation point; `None` after divergence.
    pub final_loss: Option<f64>,
    pub final_param_norm: f64,
    pub mean_step_time_ns: Option<f64>,
    pub diverged: bool,
    pub divergence_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<Row>,
    pub summary: Summary,
    /// Evaluation-point parameters at the end of the run.
    pub final_params: Vec<Vec<f64>>,
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

impl RunRecord {
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.step,
                num(r.loss),
                num(r.grad_norm),
                num(r.update_norm),
                num(r.param_norm),
                num(r.lr),
                num(r.effective_lr),
                r.d_t.map(num).unwrap_or_default(),
                r.step_time_ns
            );
        }
        s
    }

    /// Summary document embedding the resolved config and caller metadata.
    pub fn summary_json(&self, config: &RunConfig, provenance: serde_json::Value) -> String {
        let doc = serde_json::json!({
            "summary": self.summary,
            "config_hash": config.hash(),
            "config": config,
            "provenance": provenance,
        });
        serde_json::to_string_pretty(&doc).expect("summary serializes")
    }

    /// Writes `metrics.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path, config: &RunConfig, provenance: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.to_csv())?;
        std::fs::write(dir.join("summary.json"), self.summary_json(config, provenance) + "\n")?;
        Ok(())
    }
}

/// Parses a metrics CSV written by [`RunRecord::to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<Row>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header '{CSV_HEADER}'"),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Parse {
            line: idx + 1,
            message: format!("bad {what}"),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad("column count"));
        }
        let x = |i: usize, name: &str| f[i].parse::<f64>().map_err(|_| bad(name));
        rows.push(Row {
            step: f[0].parse().map_err(|_| bad("step"))?,
            loss: x(1, "loss")?,
            grad_norm: x(2, "grad_norm")?,
            update_norm: x(3, "update_norm")?,
            param_norm: x(4, "param_norm")?,
            lr: x(5, "lr")?,
            effective_lr: x(6, "effective_lr")?,
            d_t: if f[7].is_empty() { None } else { Some(x(7, "d_t")?) },
            step_time_ns: f[8].parse().map_err(|_| bad("step_time_ns"))?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> RunRecord {
        RunRecord {
            rows: vec![
                Row {
                    step: 1,
                    loss: 0.1 + 0.2,
                    grad_norm: 1e-300,
                    update_norm: 2.5,
                    param_norm: 1.0 / 3.0,
                    lr: 1e-3,
                    effective_lr: 1e-9,
                    d_t: Some(1e-6),
                    step_time_ns: 0,
                },
                Row {
                    step: 2,
                    loss: 7.0,
                    grad_norm: 0.0,
                    update_norm: 0.0,
                    param_norm: 1.0,
                    lr: 1e-3,
                    effective_lr: 1e-3,
                    d_t: None,
                    step_time_ns: 12,
                },
            ],
            summary: Summary {
                optimizer: "adamw".into(),
                problem: "quadratic".into(),
                steps: 2,
                steps_completed: 2,
                initial_loss: 1.0,
                final_loss: Some(0.5),
                final_param_norm: 1.0,
                mean_step_time_ns: None,
                diverged: false,
                divergence_step: None,
            },
            final_params: vec![],
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let r = record();
        let csv = r.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(parse_csv(&csv).unwrap(), r.rows);
    }

    #[test]
    fn csv_rejects_wrong_header() {
        assert!(matches!(parse_csv("a,b\n"), Err(Error::Parse { line: 1, .. })));
        let bad = format!("{CSV_HEADER}\n1,2\n");
        assert!(matches!(parse_csv(&bad), Err(Error::Parse { line: 2, .. })));
    }
}
