use rayon::prelude::*;

use crate::error::{Error, Result};

use super::config::is_known_key;
use super::{run, RunConfig, RunRecord};

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    /// Grid assignments in grid-key order.
    pub assignment: Vec<(String, String)>,
    pub config: RunConfig,
    pub record: RunRecord,
}

/// Cartesian product of the grid, first key varying slowest. An empty grid
/// has one empty assignment.
pub fn expand_grid(grid: &[(String, Vec<String>)]) -> Result<Vec<Vec<(String, String)>>> {
    let mut out = vec![Vec::new()];
    for (key, values) in grid {
        if key == "preset" || !is_known_key(key) {
            return Err(Error::Config(format!("sweep key '{key}' is not a config field")));
        }
        if values.is_empty() {
            return Err(Error::Config(format!("sweep key '{key}' has no values")));
        }
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut a = prefix.clone();
                    a.push((key.clone(), v.clone()));
                    a
                })
            })
            .collect();
    }
    Ok(out)
}

/// Runs every grid point of `base`, up to `jobs` at a time.
///
/// Cell `i` uses batch seed `base.seed + i`; all cells share the base
/// problem instance. Results are in grid order regardless of `jobs`.
pub fn sweep(base: &RunConfig, grid: &[(String, Vec<String>)], jobs: usize) -> Result<Vec<SweepCell>> {
    let points = expand_grid(grid)?;
    let configs = points
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut overrides = vec![
                format!("seed={}", base.seed.wrapping_add(i as u64)),
                format!("problem.seed={}", base.data_seed()),
            ];
            overrides.extend(a.iter().map(|(k, v)| format!("{k}={v}")));
            base.with_overrides(&overrides)
        })
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    let records = pool.install(|| configs.par_iter().map(run).collect::<Vec<_>>());
    points
        .into_iter()
        .zip(configs)
        .zip(records)
        .map(|((assignment, config), record)| {
            Ok(SweepCell {
                assignment,
                config,
                record: record?,
            })
        })
        .collect()
}
