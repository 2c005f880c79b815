//! SOAP: Adam run in the slowly rotating eigenbasis of Shampoo's statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gram_rows, matmul, qr_orthonormal_completed, sym_eigenbasis, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoapState {
    pub rows: usize,
    pub cols: usize,
    pub m: Vec<f64>,
    /// Second moment in the rotated basis.
    pub v: Vec<f64>,
    pub q_l: Option<Matrix>,
    pub q_r: Option<Matrix>,
    pub l_stat: Matrix,
    pub r_stat: Matrix,
    pub t: u64,
}

impl SoapState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            m: vec![0.0; rows * cols],
            v: vec![0.0; rows * cols],
            q_l: None,
            q_r: None,
            l_stat: Matrix::zeros(rows, rows),
            r_stat: Matrix::zeros(cols, cols),
            t: 0,
        }
    }

    /// Pins both bases to the identity; with refreshes disabled this reduces
    /// SOAP to AdamW.
    pub fn with_identity_bases(mut self) -> Self {
        self.q_l = Some(Matrix::identity(self.rows));
        self.q_r = Some(Matrix::identity(self.cols));
        self
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().chain(&self.v).all(|x| x.is_finite())
            && self.l_stat.is_finite()
            && self.r_stat.is_finite()
            && self.q_l.as_ref().is_none_or(Matrix::is_finite)
            && self.q_r.as_ref().is_none_or(Matrix::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoapHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Basis refresh period; 0 disables refreshes.
    pub precond_freq: u64,
    pub bias_correction: bool,
}

fn rotate_in(q_l: &Matrix, a: &Matrix, q_r: &Matrix) -> Result<Matrix> {
    matmul(&matmul(&q_l.transpose(), a)?, q_r)
}

fn rotate_out(q_l: &Matrix, a: &Matrix, q_r: &Matrix) -> Result<Matrix> {
    matmul(&matmul(q_l, a)?, &q_r.transpose())
}

fn numerical(step: u64, e: Error) -> Error {
    match e {
        Error::Numerical(msg) | Error::Degenerate(msg) => {
            Error::Numerical(format!("SOAP basis at step {step}: {msg}"))
        }
        other => other,
    }
}

pub fn soap_step(x: &mut [f64], g: &[f64], st: &mut SoapState, h: &SoapHyper) -> Result<Vec<f64>> {
    let (rows, cols) = (st.rows, st.cols);
    let grad = Matrix::new(rows, cols, g.to_vec())?;
    let ggt = gram_rows(&grad);
    let gtg = gram_rows(&grad.transpose());
    st.t += 1;
    let t = st.t;
    if st.q_l.is_none() {
        st.q_l = Some(sym_eigenbasis(&ggt).map_err(|e| numerical(t, e))?);
        st.q_r = Some(sym_eigenbasis(&gtg).map_err(|e| numerical(t, e))?);
    }
    let q_l = st.q_l.as_ref().expect("initialized above");
    let q_r = st.q_r.as_ref().expect("initialized above");

    let g_rot = rotate_in(q_l, &grad, q_r)?;
    for i in 0..g.len() {
        st.m[i] = h.beta1 * st.m[i] + (1.0 - h.beta1) * g[i];
    }
    let m_rot = rotate_in(q_l, &Matrix::new(rows, cols, st.m.clone())?, q_r)?;
    let (bc1, bc2) = if h.bias_correction {
        (1.0 - h.beta1.powi(t as i32), 1.0 - h.beta2.powi(t as i32))
    } else {
        (1.0, 1.0)
    };
    let mut n_rot = vec![0.0; g.len()];
    for i in 0..g.len() {
        let gr = g_rot.data()[i];
        st.v[i] = h.beta2 * st.v[i] + (1.0 - h.beta2) * gr * gr;
        let m_hat = m_rot.data()[i] / bc1;
        let v_hat = st.v[i] / bc2;
        n_rot[i] = m_hat / (v_hat.sqrt() + h.eps);
    }
    let n = rotate_out(q_l, &Matrix::new(rows, cols, n_rot)?, q_r)?;
    let mut delta = vec![0.0; x.len()];
    for i in 0..x.len() {
        delta[i] = -h.lr * (n.data()[i] + h.weight_decay * x[i]);
        x[i] += delta[i];
    }

    // l and r are EMAs with β₂.
    st.l_stat = st.l_stat.scaled(h.beta2);
    st.l_stat.add_scaled(1.0 - h.beta2, &ggt)?;
    st.r_stat = st.r_stat.scaled(h.beta2);
    st.r_stat.add_scaled(1.0 - h.beta2, &gtg)?;

    if h.precond_freq > 0 && t % h.precond_freq == 1 % h.precond_freq {
        let new_l = qr_orthonormal_completed(&matmul(&st.l_stat, q_l)?).map_err(|e| numerical(t, e))?;
        let new_r = qr_orthonormal_completed(&matmul(&st.r_stat, q_r)?).map_err(|e| numerical(t, e))?;
        st.q_l = Some(new_l);
        st.q_r = Some(new_r);
    }
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use crate::optim::adam::{adamw_step, AdamHyper, AdamState};

    fn hyper(freq: u64) -> SoapHyper {
        SoapHyper {
            lr: 0.01,
            weight_decay: 0.1,
            eps: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            precond_freq: freq,
            bias_correction: true,
        }
    }

    #[test]
    fn identity_bases_reduce_to_adamw() {
        let mut rng = Rng::for_stream(4, 4);
        let (r, c) = (3, 5);
        let mut xs = rng.normals(r * c);
        let mut xa = xs.clone();
        let mut ss = SoapState::new(r, c).with_identity_bases();
        let mut sa = AdamState::new(r * c);
        let h = hyper(0);
        let ha = AdamHyper {
            lr: h.lr,
            weight_decay: h.weight_decay,
            eps: h.eps,
            beta1: h.beta1,
            beta2: h.beta2,
        };
        for _ in 0..100 {
            let g = rng.normals(r * c);
            soap_step(&mut xs, &g, &mut ss, &h).unwrap();
            adamw_step(&mut xa, &g, &mut sa, &ha);
        }
        for (a, b) in xs.iter().zip(&xa) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn bases_stay_orthonormal_after_refresh() {
        let mut rng = Rng::for_stream(8, 1);
        let (r, c) = (4, 6);
        let mut x = rng.normals(r * c);
        let mut st = SoapState::new(r, c);
        for _ in 0..25 {
            let g = rng.normals(r * c);
            soap_step(&mut x, &g, &mut st, &hyper(10)).unwrap();
            for q in [st.q_l.as_ref().unwrap(), st.q_r.as_ref().unwrap()] {
                let qtq = matmul(&q.transpose(), q).unwrap();
                assert!(qtq.sub(&Matrix::identity(q.cols())).unwrap().max_abs() <= 1e-8);
            }
        }
    }
}
