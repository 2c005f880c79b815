use super::{check_shapes, BatchKey, LossGrad, Problem};
use crate::error::{Error, Result};
use crate::numerics::{dot, matmul, qr_orthonormal, Matrix, Rng};
use crate::optim::{ParamBlock, Role};

/// `f(x) = ½xᵀAx − bᵀx + f₀` with `f₀` chosen so that `f(x*) = 0`.
///
/// Stochastic gradients add `(σ/√B)·ξ` with `ξ ~ N(0, I)`, and the reported
/// loss carries the matching linear term `(σ/√B)·ξᵀ(x − x*)`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    a: Matrix,
    /// `L` with `L·Lᵀ = A`.
    sqrt_a: Matrix,
    b: Vec<f64>,
    x_star: Vec<f64>,
    x0: Vec<f64>,
    offset: f64,
    noise: f64,
    batch_size: usize,
    layout: Option<(usize, usize)>,
}

impl QuadraticProblem {
    /// `A = Q·diag(λ)·Qᵀ` with `λ` log-spaced in `[1, condition]` and a random
    /// orthogonal `Q`; `x*` and `x₀` are standard normal.
    pub fn random(dim: usize, condition: f64, rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("quadratic dimension must be at least 1"));
        }
        if !(condition.is_finite() && condition >= 1.0) {
            return Err(Error::config("quadratic condition number must be >= 1"));
        }
        let eig: Vec<f64> = (0..dim)
            .map(|i| {
                if dim == 1 {
                    1.0
                } else {
                    condition.powf(i as f64 / (dim - 1) as f64)
                }
            })
            .collect();
        let q = loop {
            let g = Matrix::new(dim, dim, rng.normals(dim * dim))?;
            if let Ok(q) = qr_orthonormal(&g) {
                break q;
            }
        };
        let sqrt_diag = Matrix::from_diag(&eig.iter().map(|l| l.sqrt()).collect::<Vec<_>>());
        let sqrt_a = matmul(&q, &sqrt_diag)?;
        let mut a = matmul(&sqrt_a, &sqrt_a.transpose())?;
        symmetrize(&mut a);
        let x_star = rng.normals(dim);
        let x0 = rng.normals(dim);
        Self::from_parts_with_root(a, sqrt_a, x_star, x0)
    }

    /// Builds from an explicit SPD `A`, minimizer and start point.
    pub fn from_parts(a: Matrix, x_star: Vec<f64>, x0: Vec<f64>) -> Result<Self> {
        let (values, vectors) = crate::numerics::sym_eigen(&a)?;
        if values.iter().any(|v| *v <= 0.0) {
            return Err(Error::config("quadratic matrix must be positive definite"));
        }
        let root = Matrix::from_diag(&values.iter().map(|v| v.sqrt()).collect::<Vec<_>>());
        let sqrt_a = matmul(&vectors, &root)?;
        Self::from_parts_with_root(a, sqrt_a, x_star, x0)
    }

    fn from_parts_with_root(a: Matrix, sqrt_a: Matrix, x_star: Vec<f64>, x0: Vec<f64>) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() || x_star.len() != n || x0.len() != n {
            return Err(Error::contract("quadratic parts have inconsistent sizes"));
        }
        let b = mat_vec(&a, &x_star);
        let offset = 0.5 * dot(&x_star, &b);
        Ok(Self {
            a,
            sqrt_a,
            b,
            x_star,
            x0,
            offset,
            noise: 0.0,
            batch_size: 1,
            layout: None,
        })
    }

    pub fn with_noise(mut self, noise: f64, batch_size: usize) -> Result<Self> {
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(Error::config("noise scale must be nonnegative"));
        }
        if batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        self.noise = noise;
        self.batch_size = batch_size;
        Ok(self)
    }

    /// Exposes the parameters as one `rows × cols` matrix block.
    pub fn with_layout(mut self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.dim() || rows < 1 || cols < 1 {
            return Err(Error::config(format!(
                "layout {rows}x{cols} does not cover dimension {}",
                self.dim()
            )));
        }
        self.layout = Some((rows, cols));
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.x_star.len()
    }

    pub fn minimizer(&self) -> &[f64] {
        &self.x_star
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    /// `σ/√B`
    pub fn effective_noise(&self) -> f64 {
        self.noise / (self.batch_size as f64).sqrt()
    }

    fn deterministic(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let ax = mat_vec(&self.a, x);
        let loss = 0.5 * dot(x, &ax) - dot(&self.b, x) + self.offset;
        let grad = ax.iter().zip(&self.b).map(|(p, q)| p - q).collect();
        (loss, grad)
    }
}

fn symmetrize(a: &mut Matrix) {
    let n = a.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
}

fn mat_vec(a: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..a.rows()).map(|i| dot(a.row(i), x)).collect()
}

impl Problem for QuadraticProblem {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn initial_params(&self) -> Vec<ParamBlock> {
        let block = match self.layout {
            Some((r, c)) => ParamBlock::new("x", vec![r, c], self.x0.clone(), Role::Matrix),
            None => ParamBlock::new("x", vec![self.dim()], self.x0.clone(), Role::Vector),
        };
        vec![block.expect("shape matches dimension")]
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn loss_and_grad(&self, params: &[&[f64]], batch: BatchKey) -> Result<LossGrad> {
        check_shapes(params, &[self.dim()])?;
        let x = params[0];
        let (mut loss, mut grad) = self.deterministic(x);
        let s = self.effective_noise();
        if s > 0.0 {
            let xi = batch.rng("quadratic.noise").normals(self.dim());
            for i in 0..grad.len() {
                grad[i] += s * xi[i];
                loss += s * xi[i] * (x[i] - self.x_star[i]);
            }
        }
        Ok(LossGrad {
            loss,
            grads: vec![grad],
        })
    }

    fn full_loss(&self, params: &[&[f64]]) -> Result<f64> {
        check_shapes(params, &[self.dim()])?;
        Ok(self.deterministic(params[0]).0)
    }

    fn supports_gnb(&self) -> bool {
        true
    }

    /// The quadratic is the least-squares loss `½‖Lᵀ(x − x*)‖²` of a
    /// unit-variance Gaussian model; resampling its targets gives
    /// `ĝ = −L·ε̄` with `ε̄` the mean of `B` standard normal draws, so that
    /// `E[B·ĝ⊙ĝ] = diag(A)`.
    fn resampled_grad(&self, params: &[&[f64]], batch: BatchKey) -> Result<Vec<Vec<f64>>> {
        check_shapes(params, &[self.dim()])?;
        let n = self.dim();
        let scale = 1.0 / (self.batch_size as f64).sqrt();
        let eps: Vec<f64> = batch
            .rng("quadratic.labels")
            .normals(n)
            .into_iter()
            .map(|e| e * scale)
            .collect();
        Ok(vec![mat_vec(&self.sqrt_a, &eps).into_iter().map(|v| -v).collect()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::finite_difference_gradient;

    #[test]
    fn scalar_case() {
        let q = QuadraticProblem::from_parts(Matrix::identity(1), vec![0.0], vec![3.0]).unwrap();
        let lg = q.loss_and_grad(&[&[3.0]], BatchKey::new(0, 1)).unwrap();
        assert_eq!(lg.grads[0], vec![3.0]);
        assert_eq!(lg.loss, 4.5);
    }

    #[test]
    fn minimizer_has_zero_gradient_and_loss() {
        let mut rng = Rng::for_stream(9, 9);
        let q = QuadraticProblem::random(20, 100.0, &mut rng).unwrap();
        let lg = q.loss_and_grad(&[q.minimizer()], BatchKey::new(0, 1)).unwrap();
        assert!(lg.grads[0].iter().all(|g| g.abs() <= 1e-10));
        assert!(lg.loss.abs() <= 1e-10);
    }

    #[test]
    fn spectrum_spans_the_condition_number() {
        let mut rng = Rng::for_stream(1, 1);
        let q = QuadraticProblem::random(6, 100.0, &mut rng).unwrap();
        let (values, _) = crate::numerics::sym_eigen(q.matrix()).unwrap();
        assert!((values[0] - 100.0).abs() < 1e-9);
        assert!((values[5] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::for_stream(2, 2);
        let q = QuadraticProblem::random(20, 100.0, &mut rng).unwrap();
        let x = rng.normals(20);
        let batch = BatchKey::new(5, 5);
        let fd = finite_difference_gradient(&q, &[&x], batch, 1e-5).unwrap();
        let g = q.loss_and_grad(&[&x], batch).unwrap().grads;
        for (a, b) in fd[0].iter().zip(&g[0]) {
            assert!((a - b).abs() <= 1e-7 * b.abs().max(1.0));
        }
    }

    #[test]
    fn noisy_gradient_matches_finite_differences_with_shared_batch() {
        let mut rng = Rng::for_stream(3, 3);
        let q = QuadraticProblem::random(5, 10.0, &mut rng)
            .unwrap()
            .with_noise(2.0, 1)
            .unwrap();
        let x = rng.normals(5);
        let batch = BatchKey::new(7, 11);
        let fd = finite_difference_gradient(&q, &[&x], batch, 1e-5).unwrap();
        let g = q.loss_and_grad(&[&x], batch).unwrap().grads;
        for (a, b) in fd[0].iter().zip(&g[0]) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn gnb_estimate_is_unbiased_for_the_diagonal() {
        let mut rng = Rng::for_stream(4, 4);
        let q = QuadraticProblem::random(4, 10.0, &mut rng)
            .unwrap()
            .with_noise(0.0, 8)
            .unwrap();
        let x = q.x0.clone();
        let n = 20_000;
        let mut acc = [0.0; 4];
        for s in 0..n {
            let g = q.resampled_grad(&[&x], BatchKey::new(1, s)).unwrap();
            for i in 0..4 {
                acc[i] += 8.0 * g[0][i] * g[0][i] / n as f64;
            }
        }
        for i in 0..4 {
            let d = q.matrix().get(i, i);
            assert!((acc[i] - d).abs() < 0.05 * d, "{i}: {} vs {d}", acc[i]);
        }
    }

    #[test]
    fn matrix_layout() {
        let mut rng = Rng::for_stream(5, 5);
        let q = QuadraticProblem::random(20, 10.0, &mut rng).unwrap().with_layout(4, 5).unwrap();
        let p = q.initial_params();
        assert_eq!(p[0].role, Role::Matrix);
        assert_eq!(p[0].shape, vec![4, 5]);
        let mut rng = Rng::for_stream(5, 5);
        assert!(QuadraticProblem::random(20, 10.0, &mut rng).unwrap().with_layout(3, 5).is_err());
    }
}
