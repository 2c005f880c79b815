//! Training loop, metric records, timing and sweeps.

pub mod bench;
pub mod config;
mod record;
mod sweep;
mod timing;

use std::time::Instant;

use crate::error::{Error, Result};
use crate::numerics::l2_norm;
use crate::optim::{Optimizer, OptimizerKind, StepContext};
use crate::problems::{views, BatchKey, Problem};

pub use config::{resolve, Resolved, RunConfig};
pub use record::{parse_csv, Row, RunRecord, Summary, CSV_HEADER};
pub use sweep::{expand_grid, sweep, SweepCell};
pub use timing::{time_optimizer, TimingStats};

/// Loss above which a run counts as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Global ℓ2 norm over all blocks.
pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales all blocks jointly to norm `threshold` when their global norm
/// exceeds it. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Vec<f64>], threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::Contract(format!("clip threshold must be positive, got {threshold}")));
    }
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::Poisoned {
            step: 0,
            what: "non-finite gradient norm".into(),
        });
    }
    if norm > threshold {
        let s = threshold / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    Ok(norm)
}

/// Checks that the optimizer can run on the problem before any step.
pub fn check_compatibility(kind: OptimizerKind, problem: &dyn Problem) -> Result<()> {
    if kind == OptimizerKind::Sophia && !problem.supports_gnb() {
        return Err(Error::Config(format!(
            "sophia needs label-resampled gradients, which the {} problem cannot provide",
            problem.name()
        )));
    }
    Ok(())
}

/// Builds the configured problem and runs it.
pub fn run(config: &RunConfig) -> Result<RunRecord> {
    let problem = config.problem.build(config.data_seed())?;
    run_on(config, problem.as_ref())
}

/// Runs `config` against an already built problem.
///
/// Per step: batch gradient at the current parameters (the `y` sequence for
/// schedule-free runs), clipping, scheduled rate, optimizer step, log row.
/// A non-finite value or a loss above [`DIVERGENCE_LOSS`] stops the run; the
/// diverging step gets no row.
pub fn run_on(config: &RunConfig, problem: &dyn Problem) -> Result<RunRecord> {
    check_compatibility(config.optimizer, problem)?;
    config.schedule.validate()?;
    let mut blocks = problem.initial_params();
    let mut opt = Optimizer::new(config.optimizer, config.hyper.clone(), &blocks, config.steps)?;
    let initial_loss = problem.full_loss(&views(&opt.eval_params(&blocks)))?;
    let gamma_max = config.schedule.gamma_max;

    let mut rows = Vec::new();
    let mut divergence_step = None;
    let mut step_time_total = 0u128;

    if opt.needs_priming() {
        let key = BatchKey::new(config.seed, 0);
        let mut grads = problem.loss_and_grad(&crate::problems::block_views(&blocks), key)?.grads;
        match prepare(&mut grads, config.clip) {
            Ok(_) => opt.prime(&grads)?,
            Err(Error::Poisoned { .. }) => divergence_step = Some(0),
            Err(e) => return Err(e),
        }
    }

    let mut completed = 0;
    for t in 1..=config.steps {
        if divergence_step.is_some() {
            break;
        }
        let key = BatchKey::new(config.seed, t);
        let current = crate::problems::block_views(&blocks);
        let lg = problem.loss_and_grad(&current, key)?;
        if !lg.loss.is_finite() || lg.loss > DIVERGENCE_LOSS {
            divergence_step = Some(t);
            break;
        }
        let mut grads = lg.grads;
        let grad_norm = match prepare(&mut grads, config.clip) {
            Ok(n) => n,
            Err(Error::Poisoned { .. }) => {
                divergence_step = Some(t);
                break;
            }
            Err(e) => return Err(e),
        };
        let resampled = if opt.wants_resampled_grad() {
            Some(problem.resampled_grad(&current, key)?)
        } else {
            None
        };
        let lr = config.schedule.lr_at(t)?;
        let ctx = StepContext {
            lr,
            lr_factor: lr / gamma_max,
            resampled: resampled.as_deref(),
            batch_size: problem.batch_size(),
        };
        let start = Instant::now();
        let outcome = opt.step(&mut blocks, &grads, &ctx);
        let elapsed = start.elapsed().as_nanos();
        let outcome = match outcome {
            Ok(o) => o,
            Err(Error::Poisoned { .. }) => {
                divergence_step = Some(t);
                break;
            }
            Err(e) => return Err(e),
        };
        step_time_total += elapsed;
        completed = t;
        if t % config.log_every == 0 || t == config.steps {
            let param_norm = blocks
                .iter()
                .map(|b| b.values.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            rows.push(Row {
                step: t,
                loss: lg.loss,
                grad_norm,
                update_norm: outcome.update_norm(),
                param_norm,
                lr,
                effective_lr: outcome.effective_lr,
                d_t: outcome.d,
                step_time_ns: if config.record_timing { elapsed as u64 } else { 0 },
            });
        }
    }

    let final_params = opt.eval_params(&blocks);
    let final_loss = if divergence_step.is_none() {
        let l = problem.full_loss(&views(&final_params))?;
        if !l.is_finite() || l > DIVERGENCE_LOSS {
            divergence_step = Some(config.steps);
            None
        } else {
            Some(l)
        }
    } else {
        None
    };
    let final_param_norm = final_params.iter().map(|p| l2_norm(p).powi(2)).sum::<f64>().sqrt();
    let mean_step_time_ns = (config.record_timing && completed > 0)
        .then(|| step_time_total as f64 / completed as f64);
    Ok(RunRecord {
        rows,
        summary: Summary {
            optimizer: config.optimizer.name().to_string(),
            problem: problem.name().to_string(),
            steps: config.steps,
            steps_completed: completed,
            initial_loss,
            final_loss,
            final_param_norm,
            mean_step_time_ns,
            diverged: divergence_step.is_some(),
            divergence_step,
        },
        final_params,
    })
}

/// Pre-clip norm, clipping when configured. Non-finite gradients come back
/// as [`Error::Poisoned`].
fn prepare(grads: &mut [Vec<f64>], clip: Option<f64>) -> Result<f64> {
    match clip {
        Some(c) => clip_gradients(grads, c),
        None => {
            let n = global_norm(grads);
            if n.is_finite() {
                Ok(n)
            } else {
                Err(Error::Poisoned {
                    step: 0,
                    what: "non-finite gradient norm".into(),
                })
            }
        }
    }
}
