use std::time::Instant;

use crate::error::{Error, Result};
use crate::optim::{Hyper, Optimizer, OptimizerKind, StepContext};
use crate::problems::{block_views, BatchKey, Problem};

use super::check_compatibility;

/// Optimizer-step wall time over repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingStats {
    pub mean_ns: f64,
    /// Sample standard deviation of the per-repeat means; 0 for one repeat.
    pub std_ns: f64,
    pub repeat_means_ns: Vec<f64>,
}

/// Times `steps` optimizer steps per repeat at constant rate `hyper.lr`.
///
/// Only [`Optimizer::step`] is inside the clock; gradients and estimator
/// draws are computed outside it. Repeat `r` uses batch seed `seed + r`.
pub fn time_optimizer(
    kind: OptimizerKind,
    hyper: &Hyper,
    problem: &dyn Problem,
    steps: u64,
    repeats: usize,
    seed: u64,
) -> Result<TimingStats> {
    if steps == 0 || repeats == 0 {
        return Err(Error::Contract("timing needs at least one step and one repeat".into()));
    }
    check_compatibility(kind, problem)?;
    let mut repeat_means_ns = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let run_seed = seed.wrapping_add(r as u64);
        let mut blocks = problem.initial_params();
        let mut opt = Optimizer::new(kind, hyper.clone(), &blocks, steps)?;
        if opt.needs_priming() {
            let g = problem.loss_and_grad(&block_views(&blocks), BatchKey::new(run_seed, 0))?;
            opt.prime(&g.grads)?;
        }
        let mut total = 0u128;
        for t in 1..=steps {
            let key = BatchKey::new(run_seed, t);
            let grads = problem.loss_and_grad(&block_views(&blocks), key)?.grads;
            let resampled = if opt.wants_resampled_grad() {
                Some(problem.resampled_grad(&block_views(&blocks), key)?)
            } else {
                None
            };
            let ctx = StepContext {
                lr: hyper.lr,
                lr_factor: 1.0,
                resampled: resampled.as_deref(),
                batch_size: problem.batch_size(),
            };
            let start = Instant::now();
            opt.step(&mut blocks, &grads, &ctx)?;
            total += start.elapsed().as_nanos();
        }
        repeat_means_ns.push(total as f64 / steps as f64);
    }
    let n = repeat_means_ns.len() as f64;
    let mean_ns = repeat_means_ns.iter().sum::<f64>() / n;
    let std_ns = if repeat_means_ns.len() > 1 {
        (repeat_means_ns.iter().map(|m| (m - mean_ns).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(TimingStats {
        mean_ns,
        std_ns,
        repeat_means_ns,
    })
}
