use super::{check_shapes, BatchKey, LossGrad, Problem};
use crate::error::{Error, Result};
use crate::optim::ParamBlock;

/// Extended Rosenbrock over consecutive pairs:
/// `Σᵢ 100(x₂ᵢ₊₁ − x₂ᵢ²)² + (1 − x₂ᵢ)²`. Deterministic; the batch is ignored.
#[derive(Debug, Clone)]
pub struct RosenbrockProblem {
    dim: usize,
}

impl RosenbrockProblem {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 || dim % 2 != 0 {
            return Err(Error::config(format!(
                "rosenbrock dimension must be even and at least 2, got {dim}"
            )));
        }
        Ok(Self { dim })
    }

    fn evaluate(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.dim];
        for i in (0..self.dim).step_by(2) {
            let (u, w) = (x[i], x[i + 1]);
            let r = w - u * u;
            loss += 100.0 * r * r + (1.0 - u) * (1.0 - u);
            grad[i] = -400.0 * r * u - 2.0 * (1.0 - u);
            grad[i + 1] = 200.0 * r;
        }
        (loss, grad)
    }
}

impl Problem for RosenbrockProblem {
    fn name(&self) -> &str {
        "rosenbrock"
    }

    /// The classical start `(−1.2, 1)` repeated.
    fn initial_params(&self) -> Vec<ParamBlock> {
        let x0 = (0..self.dim).map(|i| if i % 2 == 0 { -1.2 } else { 1.0 }).collect();
        vec![ParamBlock::vector("x", x0)]
    }

    fn batch_size(&self) -> usize {
        1
    }

    fn loss_and_grad(&self, params: &[&[f64]], _batch: BatchKey) -> Result<LossGrad> {
        check_shapes(params, &[self.dim])?;
        let (loss, grad) = self.evaluate(params[0]);
        Ok(LossGrad {
            loss,
            grads: vec![grad],
        })
    }

    fn full_loss(&self, params: &[&[f64]]) -> Result<f64> {
        check_shapes(params, &[self.dim])?;
        Ok(self.evaluate(params[0]).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use crate::problems::finite_difference_gradient;

    #[test]
    fn global_minimum() {
        let p = RosenbrockProblem::new(4).unwrap();
        let lg = p.loss_and_grad(&[&[1.0; 4]], BatchKey::new(0, 0)).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert_eq!(lg.grads[0], vec![0.0; 4]);
    }

    #[test]
    fn origin() {
        let p = RosenbrockProblem::new(2).unwrap();
        let lg = p.loss_and_grad(&[&[0.0, 0.0]], BatchKey::new(0, 0)).unwrap();
        assert_eq!(lg.loss, 1.0);
        assert_eq!(lg.grads[0], vec![-2.0, 0.0]);
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(RosenbrockProblem::new(3).is_err());
        assert!(RosenbrockProblem::new(0).is_err());
    }

    #[test]
    fn finite_differences() {
        let p = RosenbrockProblem::new(6).unwrap();
        let mut rng = Rng::for_stream(1, 0);
        for _ in 0..3 {
            let x = rng.normals(6);
            let fd = finite_difference_gradient(&p, &[&x], BatchKey::new(0, 0), 1e-5).unwrap();
            let g = p.loss_and_grad(&[&x], BatchKey::new(0, 0)).unwrap().grads;
            for (a, b) in fd[0].iter().zip(&g[0]) {
                assert!((a - b).abs() <= 1e-7 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }
}
