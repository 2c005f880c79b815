//! Benchmark suites: optimizers × budgets × seeds, ranked per budget.
//!
//! ```text
//! optimizers = adamw, signum
//! budgets = 200, 800
//! seeds = 1, 2, 3            # default 1, 2, 3
//! [base]                     # run-config keys shared by every cell
//! problem.kind = quadratic
//! problem.noise = 1.0
//! [tune.signum]              # run-config keys for one optimizer
//! lr = 0.003
//! ```
//!
//! Replicate `r` builds its problem from `seeds[r]` for every optimizer and
//! budget; batch seeds mix the replicate seed with optimizer, budget and
//! replicate index.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::{self, parse_list, parse_u64};
use crate::numerics::{label_id, stream_id};
use crate::optim::OptimizerKind;

use super::config::{file_assignments, override_assignments, resolve_assignments, Assignment, Origin};
use super::{run, RunConfig, RunRecord};

pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub optimizers: Vec<OptimizerKind>,
    pub budgets: Vec<u64>,
    pub seeds: Vec<u64>,
    base: Vec<Assignment>,
    tune: Vec<(OptimizerKind, Vec<Assignment>)>,
}

impl Suite {
    pub fn parse(text: &str) -> Result<Suite> {
        let mut optimizers = None;
        let mut budgets = None;
        let mut seeds = None;
        let mut base = Vec::new();
        let mut tune = Vec::new();
        let perr = |line: usize, message: String| Error::Parse { line, message };
        for section in kv::parse_sections(text)? {
            let as_config = |entries: &[kv::Entry]| {
                let body: String = entries.iter().map(|e| format!("{} = {}\n", e.key, e.value)).collect();
                let mut a = file_assignments(&body)?;
                for (a, e) in a.iter_mut().zip(entries) {
                    a.origin = Origin::File { line: e.line };
                }
                Ok::<_, Error>(a)
            };
            match section.header.as_str() {
                "" => {
                    for e in &section.entries {
                        match e.key.as_str() {
                            "optimizers" => {
                                let kinds = parse_list(&e.value)
                                    .iter()
                                    .map(|n| n.parse::<OptimizerKind>())
                                    .collect::<Result<Vec<_>>>()
                                    .map_err(|err| perr(e.line, err.to_string()))?;
                                optimizers = Some(kinds);
                            }
                            "budgets" => {
                                let b = parse_list(&e.value)
                                    .iter()
                                    .map(|v| parse_u64("budgets", v))
                                    .collect::<Result<Vec<_>>>()
                                    .map_err(|err| perr(e.line, err.to_string()))?;
                                budgets = Some(b);
                            }
                            "seeds" => {
                                let s = parse_list(&e.value)
                                    .iter()
                                    .map(|v| parse_u64("seeds", v))
                                    .collect::<Result<Vec<_>>>()
                                    .map_err(|err| perr(e.line, err.to_string()))?;
                                seeds = Some(s);
                            }
                            "name" => {}
                            other => return Err(perr(e.line, format!("unknown suite key '{other}'"))),
                        }
                    }
                }
                "base" => base.extend(as_config(&section.entries)?),
                header => {
                    let name = header.strip_prefix("tune.").ok_or_else(|| {
                        perr(section.line, format!("unknown section [{header}]; expected [base] or [tune.<optimizer>]"))
                    })?;
                    let kind = name
                        .parse::<OptimizerKind>()
                        .map_err(|err| perr(section.line, err.to_string()))?;
                    tune.push((kind, as_config(&section.entries)?));
                }
            }
        }
        let optimizers = optimizers.ok_or_else(|| Error::Config("suite needs an optimizers list".into()))?;
        let budgets = budgets.ok_or_else(|| Error::Config("suite needs a budgets list".into()))?;
        let seeds = seeds.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
        if optimizers.is_empty() || budgets.is_empty() || seeds.is_empty() {
            return Err(Error::Config("suite optimizers, budgets and seeds must be non-empty".into()));
        }
        if budgets.contains(&0) {
            return Err(Error::Config("budgets must be at least 1 step".into()));
        }
        Ok(Suite {
            optimizers,
            budgets,
            seeds,
            base,
            tune,
        })
    }

    /// Batch seed of one cell.
    pub fn cell_seed(seed: u64, optimizer: OptimizerKind, budget: u64, replicate: usize) -> u64 {
        stream_id(&[seed, label_id(optimizer.name()), budget, replicate as u64])
    }

    /// Resolved config of one cell, with `overrides` applied last.
    pub fn cell_config<S: AsRef<str>>(
        &self,
        optimizer: OptimizerKind,
        budget: u64,
        replicate: usize,
        overrides: &[S],
    ) -> Result<RunConfig> {
        let seed = self.seeds[replicate];
        let mut layers = self.base.clone();
        layers.push(Assignment {
            key: "optimizer.name".into(),
            value: optimizer.name().into(),
            origin: Origin::Override,
        });
        for (k, a) in &self.tune {
            if *k == optimizer {
                layers.extend(a.iter().cloned());
            }
        }
        layers.extend(override_assignments(&[
            format!("steps={budget}"),
            format!("seed={}", Self::cell_seed(seed, optimizer, budget, replicate)),
            format!("problem.seed={seed}"),
        ])?);
        layers.extend(override_assignments(overrides)?);
        Ok(resolve_assignments(layers)?.config)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub optimizer: OptimizerKind,
    pub budget: u64,
    pub replicate: usize,
    pub config: RunConfig,
    pub record: RunRecord,
}

impl BenchCell {
    /// Directory name for this cell's artifacts.
    pub fn label(&self) -> String {
        format!("{}-T{}-r{}", self.optimizer.name(), self.budget, self.replicate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub optimizer: String,
    pub budget: u64,
    /// Mean over replicates; `None` when any replicate diverged.
    pub mean_final_loss: Option<f64>,
    pub std_final_loss: Option<f64>,
    pub diverged: usize,
    /// 1-based within the budget.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub problem: String,
    pub seed_count: usize,
    pub budgets: Vec<u64>,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub cells: Vec<BenchCell>,
    pub report: ReportTable,
}

/// Runs every cell, up to `jobs` at a time, and ranks the results.
pub fn run_suite<S: AsRef<str> + Sync>(suite: &Suite, overrides: &[S], jobs: usize) -> Result<BenchResult> {
    let mut plan = Vec::new();
    for &opt in &suite.optimizers {
        for &budget in &suite.budgets {
            for r in 0..suite.seeds.len() {
                plan.push((opt, budget, r, suite.cell_config(opt, budget, r, overrides)?));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    let records = pool.install(|| plan.par_iter().map(|(_, _, _, c)| run(c)).collect::<Vec<_>>());
    let cells = plan
        .into_iter()
        .zip(records)
        .map(|((optimizer, budget, replicate, config), record)| {
            Ok(BenchCell {
                optimizer,
                budget,
                replicate,
                config,
                record: record?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = rank(suite, &cells);
    Ok(BenchResult { cells, report })
}

/// Ranks optimizers by mean final loss within each budget. Cells with a
/// diverged replicate rank after all others; ties keep suite order.
pub fn rank(suite: &Suite, cells: &[BenchCell]) -> ReportTable {
    let mut rows = Vec::new();
    for &budget in &suite.budgets {
        let mut group: Vec<ReportRow> = suite
            .optimizers
            .iter()
            .map(|&opt| {
                let losses: Vec<Option<f64>> = cells
                    .iter()
                    .filter(|c| c.optimizer == opt && c.budget == budget)
                    .map(|c| c.record.summary.final_loss)
                    .collect();
                let diverged = losses.iter().filter(|l| l.is_none()).count();
                let (mean, std) = if diverged == 0 && !losses.is_empty() {
                    let v: Vec<f64> = losses.iter().flatten().copied().collect();
                    let n = v.len() as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let std = if v.len() > 1 {
                        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                    } else {
                        0.0
                    };
                    (Some(mean), Some(std))
                } else {
                    (None, None)
                };
                ReportRow {
                    optimizer: opt.name().to_string(),
                    budget,
                    mean_final_loss: mean,
                    std_final_loss: std,
                    diverged,
                    rank: 0,
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..group.len()).collect();
        order.sort_by(|&a, &b| {
            let key = |r: &ReportRow| (r.diverged > 0, r.mean_final_loss.unwrap_or(f64::INFINITY));
            let (da, la) = key(&group[a]);
            let (db, lb) = key(&group[b]);
            da.cmp(&db).then(la.total_cmp(&lb)).then(a.cmp(&b))
        });
        for (pos, &i) in order.iter().enumerate() {
            group[i].rank = pos + 1;
        }
        rows.extend(group);
    }
    ReportTable {
        problem: cells
            .first()
            .map(|c| c.record.summary.problem.clone())
            .unwrap_or_default(),
        seed_count: suite.seeds.len(),
        budgets: suite.budgets.clone(),
        rows,
    }
}

impl ReportTable {
    /// Optimizer names from best to worst at `budget`.
    pub fn ordering(&self, budget: u64) -> Vec<String> {
        let mut rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.budget == budget).collect();
        rows.sort_by_key(|r| r.rank);
        rows.into_iter().map(|r| r.optimizer.clone()).collect()
    }

    pub fn row(&self, optimizer: &str, budget: u64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.optimizer == optimizer && r.budget == budget)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("optimizer,budget,mean_final_loss,std_final_loss,diverged,rank\n");
        let opt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.optimizer,
                r.budget,
                opt(r.mean_final_loss),
                opt(r.std_final_loss),
                r.diverged,
                r.rank
            );
        }
        s
    }

    /// Human-readable table: one line per optimizer, one column per budget.
    pub fn to_text(&self) -> String {
        let mut s = format!("problem: {}  seeds: {}\n", self.problem, self.seed_count);
        let _ = write!(s, "{:<14}", "optimizer");
        for b in &self.budgets {
            let _ = write!(s, " {:>22}", format!("T={b}"));
        }
        s.push('\n');
        let mut names: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.optimizer.as_str()) {
                names.push(&r.optimizer);
            }
        }
        for name in names {
            let _ = write!(s, "{name:<14}");
            for &b in &self.budgets {
                let cell = match self.row(name, b) {
                    Some(r) => match r.mean_final_loss {
                        Some(m) => format!("#{} {:.4e}", r.rank, m),
                        None => format!("#{} diverged({})", r.rank, r.diverged),
                    },
                    None => "-".into(),
                };
                let _ = write!(s, " {cell:>22}");
            }
            s.push('\n');
        }
        s
    }
}
