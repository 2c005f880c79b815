//! Stochastic objectives with analytic gradients.

mod mlp;
mod quadratic;
mod rosenbrock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{label_id, stream_id, Rng};
use crate::optim::ParamBlock;

pub use mlp::MlpProblem;
pub use quadratic::QuadraticProblem;
pub use rosenbrock::RosenbrockProblem;

/// Identifies one stochastic batch: the same key always yields the same
/// samples and noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BatchKey {
    pub seed: u64,
    pub step: u64,
}

impl BatchKey {
    pub fn new(seed: u64, step: u64) -> Self {
        Self { seed, step }
    }

    /// Independent stream for one purpose within this batch.
    pub fn rng(&self, purpose: &str) -> Rng {
        Rng::for_stream(self.seed, stream_id(&[self.step, label_id(purpose)]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
}

/// A differentiable objective over a fixed list of parameter blocks.
///
/// Implementations are immutable after construction, and every method is a
/// pure function of its arguments.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;

    /// Starting point; fixed at construction.
    fn initial_params(&self) -> Vec<ParamBlock>;

    /// Samples per stochastic batch.
    fn batch_size(&self) -> usize;

    fn loss_and_grad(&self, params: &[&[f64]], batch: BatchKey) -> Result<LossGrad>;

    /// Noise-free objective used for final evaluation.
    fn full_loss(&self, params: &[&[f64]]) -> Result<f64>;

    fn supports_gnb(&self) -> bool {
        false
    }

    /// Gradient against labels drawn from the model's own predictive
    /// distribution on the same batch.
    fn resampled_grad(&self, _params: &[&[f64]], _batch: BatchKey) -> Result<Vec<Vec<f64>>> {
        Err(Error::UnsupportedEstimator(format!(
            "{} has no predictive distribution to resample labels from",
            self.name()
        )))
    }
}

pub(crate) fn check_shapes(params: &[&[f64]], expected: &[usize]) -> Result<()> {
    if params.len() != expected.len()
        || params.iter().zip(expected).any(|(p, n)| p.len() != *n)
    {
        return Err(Error::contract(format!(
            "parameter blocks {:?} do not match expected sizes {expected:?}",
            params.iter().map(|p| p.len()).collect::<Vec<_>>()
        )));
    }
    Ok(())
}

/// Central differences `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` with the same batch
/// for both evaluations.
pub fn finite_difference_gradient(
    problem: &dyn Problem,
    params: &[&[f64]],
    batch: BatchKey,
    h: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(h > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let mut work: Vec<Vec<f64>> = params.iter().map(|p| p.to_vec()).collect();
    let mut out = Vec::with_capacity(params.len());
    for b in 0..work.len() {
        let mut grad = vec![0.0; work[b].len()];
        for i in 0..work[b].len() {
            let orig = work[b][i];
            work[b][i] = orig + h;
            let plus = problem.loss_and_grad(&views(&work), batch)?.loss;
            work[b][i] = orig - h;
            let minus = problem.loss_and_grad(&views(&work), batch)?.loss;
            work[b][i] = orig;
            grad[i] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Borrowed views of owned blocks.
pub fn views(params: &[Vec<f64>]) -> Vec<&[f64]> {
    params.iter().map(Vec::as_slice).collect()
}

pub fn block_views(blocks: &[ParamBlock]) -> Vec<&[f64]> {
    blocks.iter().map(|b| b.values.as_slice()).collect()
}

/// Declarative problem description as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemSpec {
    Quadratic {
        dim: usize,
        condition: f64,
        noise: f64,
        batch_size: usize,
        /// Present a `rows × cols` matrix block instead of a vector.
        layout: Option<(usize, usize)>,
    },
    Rosenbrock {
        dim: usize,
    },
    Mlp {
        in_dim: usize,
        hidden: usize,
        classes: usize,
        samples: usize,
        batch_size: usize,
    },
}

impl ProblemSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemSpec::Quadratic { .. } => "quadratic",
            ProblemSpec::Rosenbrock { .. } => "rosenbrock",
            ProblemSpec::Mlp { .. } => "mlp",
        }
    }

    pub fn quadratic(dim: usize, condition: f64) -> Self {
        ProblemSpec::Quadratic {
            dim,
            condition,
            noise: 0.0,
            batch_size: 1,
            layout: None,
        }
    }

    pub fn mlp(in_dim: usize, hidden: usize, classes: usize, samples: usize, batch_size: usize) -> Self {
        ProblemSpec::Mlp {
            in_dim,
            hidden,
            classes,
            samples,
            batch_size,
        }
    }

    /// Builds the problem; `seed` drives the synthetic data and start point.
    pub fn build(&self, seed: u64) -> Result<Box<dyn Problem>> {
        Ok(match *self {
            ProblemSpec::Quadratic {
                dim,
                condition,
                noise,
                batch_size,
                layout,
            } => {
                let mut rng = Rng::for_stream(seed, label_id("problem.quadratic"));
                let mut q = QuadraticProblem::random(dim, condition, &mut rng)?;
                q = q.with_noise(noise, batch_size)?;
                if let Some((r, c)) = layout {
                    q = q.with_layout(r, c)?;
                }
                Box::new(q)
            }
            ProblemSpec::Rosenbrock { dim } => Box::new(RosenbrockProblem::new(dim)?),
            ProblemSpec::Mlp {
                in_dim,
                hidden,
                classes,
                samples,
                batch_size,
            } => {
                let mut rng = Rng::for_stream(seed, label_id("problem.mlp"));
                Box::new(MlpProblem::new(in_dim, hidden, classes, samples, batch_size, &mut rng)?)
            }
        })
    }
}
