use super::{check_shapes, BatchKey, LossGrad, Problem};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::optim::{ParamBlock, Role};

/// Two-layer tanh network with softmax cross-entropy on Gaussian clusters.
///
/// Blocks: `w1` (hidden × in, matrix), `b1` (vector), `w2` (classes × hidden,
/// output head), `b2` (vector). Batches are drawn with replacement.
#[derive(Debug, Clone)]
pub struct MlpProblem {
    in_dim: usize,
    hidden: usize,
    classes: usize,
    batch_size: usize,
    /// Row-major `samples × in_dim`.
    inputs: Vec<f64>,
    labels: Vec<usize>,
    init: Vec<ParamBlock>,
}

struct Pass {
    loss: f64,
    grads: Option<Vec<Vec<f64>>>,
}

impl MlpProblem {
    pub fn new(
        in_dim: usize,
        hidden: usize,
        classes: usize,
        samples: usize,
        batch_size: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if in_dim == 0 || hidden == 0 || classes == 0 || samples == 0 || batch_size == 0 {
            return Err(Error::config("mlp dimensions, sample count and batch size must be >= 1"));
        }
        let centers = rng.normals(classes * in_dim);
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let mut inputs = Vec::with_capacity(samples * in_dim);
        let mut labels = Vec::with_capacity(samples);
        for s in 0..samples {
            let c = s % classes;
            labels.push(c);
            let noise = rng.normals(in_dim);
            for k in 0..in_dim {
                inputs.push((centers[c * in_dim + k] + noise[k]) * scale);
            }
        }
        let w1_scale = 1.0 / (in_dim as f64).sqrt();
        let w2_scale = 0.1 / (hidden as f64).sqrt();
        let w1 = rng.normals(hidden * in_dim).into_iter().map(|v| v * w1_scale).collect();
        let w2 = rng.normals(classes * hidden).into_iter().map(|v| v * w2_scale).collect();
        let init = vec![
            ParamBlock::new("w1", vec![hidden, in_dim], w1, Role::Matrix)?,
            ParamBlock::new("b1", vec![hidden], vec![0.0; hidden], Role::Vector)?,
            ParamBlock::new("w2", vec![classes, hidden], w2, Role::OutputHead)?,
            ParamBlock::new("b2", vec![classes], vec![0.0; classes], Role::Vector)?,
        ];
        Ok(Self {
            in_dim,
            hidden,
            classes,
            batch_size,
            inputs,
            labels,
            init,
        })
    }

    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    fn sizes(&self) -> [usize; 4] {
        [
            self.hidden * self.in_dim,
            self.hidden,
            self.classes * self.hidden,
            self.classes,
        ]
    }

    fn batch_indices(&self, batch: BatchKey) -> Vec<usize> {
        let mut rng = batch.rng("mlp.batch");
        (0..self.batch_size).map(|_| rng.below(self.samples())).collect()
    }

    /// Forward pass over `idx`, with labels chosen by `label_of(sample,
    /// probabilities)`, and the backward pass when `want_grad`.
    fn pass(
        &self,
        p: &[&[f64]],
        idx: &[usize],
        mut label_of: impl FnMut(usize, &[f64]) -> usize,
        want_grad: bool,
    ) -> Pass {
        let (w1, b1, w2, b2) = (p[0], p[1], p[2], p[3]);
        let (n_in, n_h, n_c) = (self.in_dim, self.hidden, self.classes);
        let inv_b = 1.0 / idx.len() as f64;
        let mut grads = want_grad.then(|| self.sizes().map(|n| vec![0.0; n]).to_vec());
        let mut h = vec![0.0; n_h];
        let mut z = vec![0.0; n_c];
        let mut prob = vec![0.0; n_c];
        let mut dh = vec![0.0; n_h];
        let mut loss = 0.0;
        for &s in idx {
            let x = &self.inputs[s * n_in..(s + 1) * n_in];
            for j in 0..n_h {
                let row = &w1[j * n_in..(j + 1) * n_in];
                let a: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[j];
                h[j] = a.tanh();
            }
            for c in 0..n_c {
                let row = &w2[c * n_h..(c + 1) * n_h];
                z[c] = row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + b2[c];
            }
            let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for c in 0..n_c {
                prob[c] = (z[c] - zmax).exp();
                total += prob[c];
            }
            for v in &mut prob {
                *v /= total;
            }
            let y = label_of(s, &prob);
            loss += (zmax + total.ln() - z[y]) * inv_b;

            let Some(g) = grads.as_mut() else { continue };
            dh.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..n_c {
                let dz = (prob[c] - if c == y { 1.0 } else { 0.0 }) * inv_b;
                g[3][c] += dz;
                let row = &w2[c * n_h..(c + 1) * n_h];
                let grow = &mut g[2][c * n_h..(c + 1) * n_h];
                for j in 0..n_h {
                    grow[j] += dz * h[j];
                    dh[j] += dz * row[j];
                }
            }
            for j in 0..n_h {
                let da = dh[j] * (1.0 - h[j] * h[j]);
                g[1][j] += da;
                let grow = &mut g[0][j * n_in..(j + 1) * n_in];
                for (gw, v) in grow.iter_mut().zip(x) {
                    *gw += da * v;
                }
            }
        }
        Pass { loss, grads }
    }
}

/// Inverse-CDF draw from a categorical distribution.
fn sample_categorical(prob: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (c, p) in prob.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    prob.len() - 1
}

impl Problem for MlpProblem {
    fn name(&self) -> &str {
        "mlp"
    }

    fn initial_params(&self) -> Vec<ParamBlock> {
        self.init.clone()
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn loss_and_grad(&self, params: &[&[f64]], batch: BatchKey) -> Result<LossGrad> {
        check_shapes(params, &self.sizes())?;
        let idx = self.batch_indices(batch);
        let pass = self.pass(params, &idx, |s, _| self.labels[s], true);
        Ok(LossGrad {
            loss: pass.loss,
            grads: pass.grads.expect("gradients requested"),
        })
    }

    fn full_loss(&self, params: &[&[f64]]) -> Result<f64> {
        check_shapes(params, &self.sizes())?;
        let idx: Vec<usize> = (0..self.samples()).collect();
        Ok(self.pass(params, &idx, |s, _| self.labels[s], false).loss)
    }

    fn supports_gnb(&self) -> bool {
        true
    }

    fn resampled_grad(&self, params: &[&[f64]], batch: BatchKey) -> Result<Vec<Vec<f64>>> {
        check_shapes(params, &self.sizes())?;
        let idx = self.batch_indices(batch);
        let mut rng = batch.rng("mlp.resample");
        let pass = self.pass(params, &idx, |_, prob| sample_categorical(prob, rng.uniform()), true);
        Ok(pass.grads.expect("gradients requested"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{block_views, finite_difference_gradient, views};

    fn problem() -> MlpProblem {
        let mut rng = Rng::for_stream(10, 0);
        MlpProblem::new(5, 4, 3, 60, 8, &mut rng).unwrap()
    }

    #[test]
    fn untrained_loss_is_near_uniform_entropy() {
        let mut rng = Rng::for_stream(11, 0);
        let p = MlpProblem::new(16, 32, 10, 500, 32, &mut rng).unwrap();
        let init = p.initial_params();
        let loss = p.full_loss(&block_views(&init)).unwrap();
        assert!((loss - 10f64.ln()).abs() < 0.1, "{loss}");
    }

    #[test]
    fn roles() {
        let roles: Vec<Role> = problem().initial_params().iter().map(|b| b.role).collect();
        assert_eq!(roles, vec![Role::Matrix, Role::Vector, Role::OutputHead, Role::Vector]);
    }

    #[test]
    fn finite_differences_at_random_points() {
        let p = problem();
        let mut rng = Rng::for_stream(12, 0);
        for point in 0..3 {
            let params: Vec<Vec<f64>> = p
                .initial_params()
                .iter()
                .map(|b| rng.normals(b.len()).into_iter().map(|v| 0.5 * v).collect())
                .collect();
            let batch = BatchKey::new(3, point);
            let fd = finite_difference_gradient(&p, &views(&params), batch, 1e-5).unwrap();
            let g = p.loss_and_grad(&views(&params), batch).unwrap().grads;
            for (fb, gb) in fd.iter().zip(&g) {
                for (a, b) in fb.iter().zip(gb) {
                    assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn resampled_gradient_is_deterministic_and_differs_from_true_labels() {
        let p = problem();
        let init = p.initial_params();
        let batch = BatchKey::new(4, 2);
        let a = p.resampled_grad(&block_views(&init), batch).unwrap();
        let b = p.resampled_grad(&block_views(&init), batch).unwrap();
        assert_eq!(a, b);
        let g = p.loss_and_grad(&block_views(&init), batch).unwrap().grads;
        assert_ne!(a, g);
    }

    #[test]
    fn categorical_sampling() {
        assert_eq!(sample_categorical(&[0.2, 0.3, 0.5], 0.1), 0);
        assert_eq!(sample_categorical(&[0.2, 0.3, 0.5], 0.45), 1);
        assert_eq!(sample_categorical(&[0.2, 0.3, 0.5], 0.9999), 2);
    }
}
