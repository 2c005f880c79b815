//! Plain-loop reference implementations of every update rule.
//!
//! Nothing here calls into `optim`. Matrices are nested `Vec`s and products
//! are triple loops. SOAP borrows only the symmetric eigenbasis and the
//! completed QR from `numerics`, since any other backend would pick a
//! different basis for repeated eigenvalues.

use crate::numerics::{qr_orthonormal_completed, sym_eigenbasis, Matrix};
use crate::optim::{Hyper, OptimizerKind, ParamBlock, Role};

type Mat = Vec<Vec<f64>>;

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn to_mat(v: &[f64], rows: usize, cols: usize) -> Mat {
    (0..rows).map(|i| v[i * cols..(i + 1) * cols].to_vec()).collect()
}

fn flatten(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

fn transpose(a: &Mat) -> Mat {
    let (r, c) = (a.len(), a[0].len());
    (0..c).map(|j| (0..r).map(|i| a[i][j]).collect()).collect()
}

fn mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn to_matrix(a: &Mat) -> Matrix {
    Matrix::new(a.len(), a[0].len(), flatten(a)).expect("rectangular")
}

fn from_matrix(a: &Matrix) -> Mat {
    to_mat(a.data(), a.rows(), a.cols())
}

/// Quintic Newton-Schulz on nested vectors; the zero matrix maps to zero.
pub fn newton_schulz(g: &Mat, iters: usize, (a, b, c): (f64, f64, f64)) -> Mat {
    let norm = g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return g.clone();
    }
    let tall = g.len() > g[0].len();
    let mut x = if tall { transpose(g) } else { g.clone() };
    for row in &mut x {
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    for _ in 0..iters {
        let xxt = mul(&x, &transpose(&x));
        let sq = mul(&xxt, &xxt);
        let n = xxt.len();
        let poly: Mat = (0..n)
            .map(|i| (0..n).map(|j| b * xxt[i][j] + c * sq[i][j]).collect())
            .collect();
        let px = mul(&poly, &x);
        for i in 0..x.len() {
            for j in 0..x[0].len() {
                x[i][j] = a * x[i][j] + px[i][j];
            }
        }
    }
    if tall {
        transpose(&x)
    } else {
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Rule {
    /// AdamW with the main betas and the scheduled rate.
    Adam,
    /// AdamW with the auxiliary betas; `scheduled` uses the main rate,
    /// otherwise `adam_lr` times the schedule factor.
    AdamAux { scheduled: bool },
    Adopt,
    Ademamix,
    Lion,
    Signum,
    Muon,
    DMuon,
    Soap,
    Sophia,
    SfAdamW,
    MarsAdamW,
    MarsLion,
    MarsShampoo,
    Prodigy,
}

fn route(kind: OptimizerKind, h: &Hyper, b: &ParamBlock) -> Rule {
    use OptimizerKind as K;
    let matrix = b.role == Role::Matrix;
    match kind {
        K::AdamW => Rule::Adam,
        K::Adopt => Rule::Adopt,
        K::Ademamix => Rule::Ademamix,
        K::Lion => Rule::Lion,
        K::Signum => Rule::Signum,
        K::Sophia => Rule::Sophia,
        K::SfAdamW => Rule::SfAdamW,
        K::Prodigy => Rule::Prodigy,
        K::Muon if matrix => Rule::Muon,
        K::DMuon if matrix => Rule::DMuon,
        K::DMuon => Rule::AdamAux { scheduled: true },
        K::Soap if matrix && b.matrix_dims().0.max(b.matrix_dims().1) <= h.max_precond_dim => Rule::Soap,
        K::Soap => Rule::Adam,
        K::MarsAdamW if matrix => Rule::MarsAdamW,
        K::MarsLion if matrix => Rule::MarsLion,
        K::MarsShampoo if matrix => Rule::MarsShampoo,
        K::Muon | K::MarsAdamW | K::MarsLion | K::MarsShampoo => Rule::AdamAux { scheduled: false },
    }
}

#[derive(Debug, Clone)]
struct SoapBuffers {
    q_l: Option<Mat>,
    q_r: Option<Mat>,
    l: Mat,
    r: Mat,
}

#[derive(Debug, Clone)]
struct Slot {
    rule: Rule,
    rows: usize,
    cols: usize,
    m: Vec<f64>,
    v: Vec<f64>,
    /// Slow EMA (AdEMAMix), previous gradient (MARS), curvature (Sophia),
    /// `z` (schedule-free), `s` (Prodigy).
    aux: Vec<f64>,
    /// Averaged iterate (schedule-free) or starting point (Prodigy).
    anchor: Vec<f64>,
    soap: Option<SoapBuffers>,
    primed: bool,
    t: u64,
}

/// Independent re-implementation of [`crate::optim::Optimizer`] for a fixed
/// block layout.
#[derive(Debug, Clone)]
pub struct Reference {
    kind: OptimizerKind,
    h: Hyper,
    total_steps: u64,
    slots: Vec<Slot>,
    sf_lr_sq: f64,
    prodigy_d: f64,
    prodigy_r: f64,
    t: u64,
}

impl Reference {
    pub fn new(kind: OptimizerKind, hyper: &Hyper, blocks: &[ParamBlock], total_steps: u64) -> Self {
        let slots = blocks
            .iter()
            .map(|b| {
                let n = b.len();
                let rule = route(kind, hyper, b);
                let (rows, cols) = b.matrix_dims();
                let soap = (rule == Rule::Soap).then(|| SoapBuffers {
                    q_l: hyper.identity_basis.then(|| identity(rows)),
                    q_r: hyper.identity_basis.then(|| identity(cols)),
                    l: vec![vec![0.0; rows]; rows],
                    r: vec![vec![0.0; cols]; cols],
                });
                let aux = if rule == Rule::SfAdamW { b.values.clone() } else { vec![0.0; n] };
                Slot {
                    rule,
                    rows,
                    cols,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                    aux,
                    anchor: b.values.clone(),
                    soap,
                    primed: false,
                    t: 0,
                }
            })
            .collect();
        Self {
            kind,
            h: hyper.clone(),
            total_steps,
            slots,
            sf_lr_sq: 0.0,
            prodigy_d: hyper.d0,
            prodigy_r: 0.0,
            t: 0,
        }
    }

    /// ADOPT second-moment initialization from a first gradient.
    pub fn prime(&mut self, grads: &[Vec<f64>]) {
        for (s, g) in self.slots.iter_mut().zip(grads) {
            if s.rule == Rule::Adopt {
                s.v = g.iter().map(|x| x * x).collect();
                s.primed = true;
            }
        }
    }

    /// Evaluation point: the averaged iterate for schedule-free blocks.
    pub fn eval_params(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.slots
            .iter()
            .zip(x)
            .map(|(s, x)| if s.rule == Rule::SfAdamW { s.anchor.clone() } else { x.clone() })
            .collect()
    }

    /// Distance estimate Prodigy will use on its next step.
    pub fn prodigy_d(&self) -> f64 {
        self.prodigy_d
    }

    pub fn step(
        &mut self,
        x: &mut [Vec<f64>],
        g: &[Vec<f64>],
        lr: f64,
        lr_factor: f64,
        resampled: Option<&[Vec<f64>]>,
        batch_size: usize,
    ) {
        self.t += 1;
        if self.kind == OptimizerKind::Prodigy {
            self.prodigy(x, g, lr);
            return;
        }
        let h = self.h.clone();
        let total = self.total_steps;
        let mut sf_lr_sq = self.sf_lr_sq;
        for (k, slot) in self.slots.iter_mut().enumerate() {
            let (x, g) = (&mut x[k], &g[k]);
            slot.t += 1;
            let t = slot.t;
            let n = x.len();
            match slot.rule {
                Rule::Adam => adam(x, g, slot, lr, h.beta1, h.beta2, h.eps, h.weight_decay),
                Rule::AdamAux { scheduled } => {
                    let rate = if scheduled { lr } else { h.adam_lr * lr_factor };
                    adam(x, g, slot, rate, h.adam_beta1, h.adam_beta2, h.adam_eps, h.weight_decay)
                }
                Rule::Adopt => {
                    assert!(slot.primed, "ADOPT reference stepped before priming");
                    let bound = (t as f64).sqrt().sqrt();
                    for i in 0..n {
                        let denom = if slot.v[i].sqrt() > h.eps { slot.v[i].sqrt() } else { h.eps };
                        let s = (g[i] / denom).max(-bound).min(bound);
                        slot.m[i] = h.beta1 * slot.m[i] + (1.0 - h.beta1) * s;
                        x[i] -= lr * (slot.m[i] + h.weight_decay * x[i]);
                        slot.v[i] = h.beta2 * slot.v[i] + (1.0 - h.beta2) * g[i] * g[i];
                    }
                }
                Rule::Ademamix => {
                    let t_alpha = h.alpha_warmup.unwrap_or(total);
                    let t_beta = h.beta3_warmup.unwrap_or(total);
                    let alpha = if t_alpha == 0 {
                        h.alpha
                    } else {
                        (h.alpha * t as f64 / t_alpha as f64).min(h.alpha)
                    };
                    let beta3 = if t_beta == 0 || t >= t_beta {
                        h.beta3
                    } else {
                        let f = t as f64 / t_beta as f64;
                        let (ls, le) = (h.beta1.ln(), h.beta3.ln());
                        (ls * le / ((1.0 - f) * le + f * ls)).exp().min(h.beta3)
                    };
                    let c1 = 1.0 - h.beta1.powi(t as i32);
                    let c2 = 1.0 - h.beta2.powi(t as i32);
                    for i in 0..n {
                        slot.m[i] = h.beta1 * slot.m[i] + (1.0 - h.beta1) * g[i];
                        slot.aux[i] = beta3 * slot.aux[i] + (1.0 - beta3) * g[i];
                        slot.v[i] = h.beta2 * slot.v[i] + (1.0 - h.beta2) * g[i] * g[i];
                        let num = slot.m[i] / c1 + alpha * slot.aux[i];
                        let den = (slot.v[i] / c2).sqrt() + h.eps;
                        x[i] -= lr * (num / den + h.weight_decay * x[i]);
                    }
                }
                Rule::Lion => {
                    for i in 0..n {
                        let u = sgn(h.beta1 * slot.m[i] + (1.0 - h.beta1) * g[i]);
                        x[i] -= lr * (u + h.weight_decay * x[i]);
                        slot.m[i] = h.beta2 * slot.m[i] + (1.0 - h.beta2) * g[i];
                    }
                }
                Rule::Signum => {
                    let beta = h.momentum;
                    for i in 0..n {
                        let gi = if h.coupled_weight_decay { g[i] + h.weight_decay * x[i] } else { g[i] };
                        slot.m[i] = beta * slot.m[i] + (1.0 - h.dampening) * gi;
                        let u = sgn(if h.nesterov { beta * slot.m[i] + gi } else { slot.m[i] });
                        let decay = if h.coupled_weight_decay { 0.0 } else { h.weight_decay * x[i] };
                        x[i] -= lr * (u + decay);
                    }
                }
                Rule::Muon | Rule::DMuon => {
                    let beta = h.momentum;
                    let mut dir = vec![0.0; n];
                    for i in 0..n {
                        slot.m[i] = beta * slot.m[i] + g[i];
                        dir[i] = if h.nesterov { beta * slot.m[i] + g[i] } else { slot.m[i] };
                    }
                    let o = flatten(&newton_schulz(
                        &to_mat(&dir, slot.rows, slot.cols),
                        h.ns_iters,
                        (h.ns_a, h.ns_b, h.ns_c),
                    ));
                    if slot.rule == Rule::Muon {
                        for i in 0..n {
                            x[i] -= lr * o[i];
                        }
                    } else {
                        let scale = h.rms_scale * (slot.rows.max(slot.cols) as f64).sqrt();
                        for i in 0..n {
                            x[i] -= lr * (scale * o[i] + h.weight_decay * x[i]);
                        }
                    }
                }
                Rule::Soap => soap(x, g, slot, lr, &h),
                Rule::Sophia => {
                    let f = h.estimator_freq;
                    if f > 0 && t % f == 1 % f {
                        let gh = &resampled.expect("sophia reference needs resampled gradients")[k];
                        for i in 0..n {
                            let est = batch_size as f64 * gh[i] * gh[i];
                            slot.aux[i] = h.beta2 * slot.aux[i] + (1.0 - h.beta2) * est;
                        }
                    }
                    for i in 0..n {
                        slot.m[i] = h.beta1 * slot.m[i] + (1.0 - h.beta1) * g[i];
                        let ratio = (slot.m[i].abs() / (h.rho * slot.aux[i] + h.eps)).min(1.0);
                        x[i] -= lr * (sgn(slot.m[i]) * ratio + h.weight_decay * x[i]);
                    }
                }
                Rule::SfAdamW => {
                    // All blocks share the step count, so the Σγ² sum is
                    // advanced once per step on the first block.
                    let warm = if h.sf_warmup == 0 { 1.0 } else { (t as f64 / h.sf_warmup as f64).min(1.0) };
                    let rate = lr * (1.0 - h.beta2.powi(t as i32)).sqrt() * warm;
                    if k == 0 {
                        sf_lr_sq += rate * rate;
                    }
                    let c = if sf_lr_sq > 0.0 { rate * rate / sf_lr_sq } else { 0.0 };
                    for i in 0..n {
                        let y = x[i];
                        slot.v[i] = h.beta2 * slot.v[i] + (1.0 - h.beta2) * g[i] * g[i];
                        slot.aux[i] -= rate * (g[i] / (slot.v[i].sqrt() + h.eps) + h.weight_decay * y);
                        slot.anchor[i] = (1.0 - c) * slot.anchor[i] + c * slot.aux[i];
                        x[i] = (1.0 - h.beta1) * slot.aux[i] + h.beta1 * slot.anchor[i];
                    }
                }
                Rule::MarsAdamW | Rule::MarsLion | Rule::MarsShampoo => mars(x, g, slot, lr, &h),
                Rule::Prodigy => unreachable!("handled jointly"),
            }
        }
        self.sf_lr_sq = sf_lr_sq;
    }

    fn prodigy(&mut self, x: &mut [Vec<f64>], g: &[Vec<f64>], lr: f64) {
        let h = &self.h;
        let t = self.t as i32;
        let rate = if h.bias_correction {
            lr * (1.0 - h.beta2.powi(t)).sqrt() / (1.0 - h.beta1.powi(t))
        } else {
            lr
        };
        let d = self.prodigy_d;
        let rb = h.beta2.sqrt();
        let mut inner = 0.0;
        for (k, slot) in self.slots.iter().enumerate() {
            for i in 0..x[k].len() {
                inner += g[k][i] * (slot.anchor[i] - x[k][i]);
            }
        }
        self.prodigy_r = rb * self.prodigy_r + (1.0 - rb) * rate * d * d * inner;
        let mut s_sum = 0.0;
        for (k, slot) in self.slots.iter_mut().enumerate() {
            for i in 0..x[k].len() {
                let gi = g[k][i];
                slot.m[i] = h.beta1 * slot.m[i] + (1.0 - h.beta1) * d * gi;
                slot.v[i] = h.beta2 * slot.v[i] + (1.0 - h.beta2) * d * d * gi * gi;
                slot.aux[i] = rb * slot.aux[i] + (1.0 - rb) * rate * d * d * gi;
                s_sum += slot.aux[i].abs();
                let u = slot.m[i] / (slot.v[i].sqrt() + d * h.eps);
                x[k][i] -= rate * d * (u + h.weight_decay * x[k][i]);
            }
        }
        if s_sum > 0.0 && self.prodigy_r / s_sum > d {
            self.prodigy_d = self.prodigy_r / s_sum;
        }
    }
}

fn identity(n: usize) -> Mat {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

#[allow(clippy::too_many_arguments)]
fn adam(x: &mut [f64], g: &[f64], s: &mut Slot, lr: f64, b1: f64, b2: f64, eps: f64, wd: f64) {
    let c1 = 1.0 - b1.powi(s.t as i32);
    let c2 = 1.0 - b2.powi(s.t as i32);
    for i in 0..x.len() {
        s.m[i] = b1 * s.m[i] + (1.0 - b1) * g[i];
        s.v[i] = b2 * s.v[i] + (1.0 - b2) * g[i] * g[i];
        x[i] -= lr * ((s.m[i] / c1) / ((s.v[i] / c2).sqrt() + eps) + wd * x[i]);
    }
}

fn soap(x: &mut [f64], g: &[f64], s: &mut Slot, lr: f64, h: &Hyper) {
    let (rows, cols, t) = (s.rows, s.cols, s.t);
    let gm = to_mat(g, rows, cols);
    let gt = transpose(&gm);
    let ggt = mul(&gm, &gt);
    let gtg = mul(&gt, &gm);
    let buf = s.soap.as_mut().expect("soap buffers");
    if buf.q_l.is_none() {
        buf.q_l = Some(from_matrix(&sym_eigenbasis(&to_matrix(&ggt)).expect("eigenbasis")));
        buf.q_r = Some(from_matrix(&sym_eigenbasis(&to_matrix(&gtg)).expect("eigenbasis")));
    }
    let q_l = buf.q_l.clone().expect("set above");
    let q_r = buf.q_r.clone().expect("set above");
    let into = |a: &Mat| mul(&mul(&transpose(&q_l), a), &q_r);
    let g_rot = flatten(&into(&gm));
    for i in 0..g.len() {
        s.m[i] = h.beta1 * s.m[i] + (1.0 - h.beta1) * g[i];
    }
    let m_rot = flatten(&into(&to_mat(&s.m, rows, cols)));
    let (c1, c2) = if h.bias_correction {
        (1.0 - h.beta1.powi(t as i32), 1.0 - h.beta2.powi(t as i32))
    } else {
        (1.0, 1.0)
    };
    let mut n_rot = vec![0.0; g.len()];
    for i in 0..g.len() {
        s.v[i] = h.beta2 * s.v[i] + (1.0 - h.beta2) * g_rot[i] * g_rot[i];
        n_rot[i] = (m_rot[i] / c1) / ((s.v[i] / c2).sqrt() + h.eps);
    }
    let dir = flatten(&mul(&mul(&q_l, &to_mat(&n_rot, rows, cols)), &transpose(&q_r)));
    for i in 0..x.len() {
        x[i] -= lr * (dir[i] + h.weight_decay * x[i]);
    }
    for (stat, fresh) in [(&mut buf.l, &ggt), (&mut buf.r, &gtg)] {
        for i in 0..stat.len() {
            for j in 0..stat.len() {
                stat[i][j] = h.beta2 * stat[i][j] + (1.0 - h.beta2) * fresh[i][j];
            }
        }
    }
    let f = h.precond_freq;
    if f > 0 && t % f == 1 % f {
        let ql = qr_orthonormal_completed(&to_matrix(&mul(&buf.l, &q_l))).expect("qr");
        let qr = qr_orthonormal_completed(&to_matrix(&mul(&buf.r, &q_r))).expect("qr");
        buf.q_l = Some(from_matrix(&ql));
        buf.q_r = Some(from_matrix(&qr));
    }
}

fn mars(x: &mut [f64], g: &[f64], s: &mut Slot, lr: f64, h: &Hyper) {
    let n = x.len();
    let gamma = h.eta * h.beta1 / (1.0 - h.beta1);
    let mut c: Vec<f64> = (0..n).map(|i| g[i] + gamma * (g[i] - s.aux[i])).collect();
    if s.rule != Rule::MarsShampoo {
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 {
            c.iter_mut().for_each(|v| *v /= norm);
        }
    }
    for i in 0..n {
        s.m[i] = h.beta1 * s.m[i] + (1.0 - h.beta1) * c[i];
    }
    let dir: Vec<f64> = match s.rule {
        Rule::MarsAdamW => {
            let c1 = 1.0 - h.beta1.powi(s.t as i32);
            let c2 = 1.0 - h.beta2.powi(s.t as i32);
            (0..n)
                .map(|i| {
                    s.v[i] = h.beta2 * s.v[i] + (1.0 - h.beta2) * c[i] * c[i];
                    (s.m[i] / c1) / ((s.v[i] / c2).sqrt() + h.eps)
                })
                .collect()
        }
        Rule::MarsLion => s.m.iter().map(|v| sgn(*v)).collect(),
        _ => flatten(&newton_schulz(&to_mat(&s.m, s.rows, s.cols), h.ns_iters, (h.ns_a, h.ns_b, h.ns_c))),
    };
    for i in 0..n {
        x[i] -= lr * (dir[i] + h.weight_decay * x[i]);
    }
    s.aux.copy_from_slice(g);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newton_schulz_of_zero_is_zero() {
        let z = vec![vec![0.0; 3]; 2];
        assert_eq!(newton_schulz(&z, 5, (3.4445, -4.775, 2.0315)), z);
    }

    #[test]
    fn triple_loop_product() {
        let a = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(mul(&a, &identity(2)), a);
        assert_eq!(mul(&a, &a), vec![vec![7.0, 10.0], vec![15.0, 22.0]]);
    }
}
