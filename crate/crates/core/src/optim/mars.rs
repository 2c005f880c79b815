//! MARS variance-reduced updates for matrix blocks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::newton_schulz::{newton_schulz_orthogonalize, NsCoefficients};
use crate::error::{Error, Result};
use crate::numerics::{l2_norm, sign, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarsVariant {
    Adamw,
    Lion,
    Shampoo,
}

impl fmt::Display for MarsVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarsVariant::Adamw => "adamw",
            MarsVariant::Lion => "lion",
            MarsVariant::Shampoo => "shampoo",
        })
    }
}

impl FromStr for MarsVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adamw" => Ok(MarsVariant::Adamw),
            "lion" => Ok(MarsVariant::Lion),
            "shampoo" => Ok(MarsVariant::Shampoo),
            other => Err(Error::config(format!("unknown MARS variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarsState {
    /// Previous raw gradient; zero before the first step.
    pub g_prev: Vec<f64>,
    pub m: Vec<f64>,
    /// Used by the AdamW variant only.
    pub v: Vec<f64>,
    pub t: u64,
}

impl MarsState {
    pub fn new(len: usize) -> Self {
        Self {
            g_prev: vec![0.0; len],
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.g_prev
            .iter()
            .chain(&self.m)
            .chain(&self.v)
            .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarsHyper {
    pub variant: MarsVariant,
    pub lr: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eta: f64,
    pub ns_iters: usize,
    pub ns_coeffs: NsCoefficients,
}

/// `c = g + η·β₁/(1−β₁)·(g − g_prev)`, clipped to unit norm except for the
/// Shampoo variant.
pub fn mars_correction(g: &[f64], g_prev: &[f64], h: &MarsHyper) -> Vec<f64> {
    let scale = h.eta * h.beta1 / (1.0 - h.beta1);
    let mut c: Vec<f64> = g
        .iter()
        .zip(g_prev)
        .map(|(gi, pi)| gi + scale * (gi - pi))
        .collect();
    if h.variant != MarsVariant::Shampoo {
        let norm = l2_norm(&c);
        if norm > 1.0 {
            for ci in &mut c {
                *ci /= norm;
            }
        }
    }
    c
}

pub fn mars_step(
    x: &mut [f64],
    g: &[f64],
    st: &mut MarsState,
    h: &MarsHyper,
    rows: usize,
    cols: usize,
) -> Result<Vec<f64>> {
    st.t += 1;
    let c = mars_correction(g, &st.g_prev, h);
    for i in 0..c.len() {
        st.m[i] = h.beta1 * st.m[i] + (1.0 - h.beta1) * c[i];
    }
    let mut delta = vec![0.0; x.len()];
    match h.variant {
        MarsVariant::Adamw => {
            let bc1 = 1.0 - h.beta1.powi(st.t as i32);
            let bc2 = 1.0 - h.beta2.powi(st.t as i32);
            for i in 0..x.len() {
                st.v[i] = h.beta2 * st.v[i] + (1.0 - h.beta2) * c[i] * c[i];
                let m_hat = st.m[i] / bc1;
                let v_hat = st.v[i] / bc2;
                delta[i] = -h.lr * (m_hat / (v_hat.sqrt() + h.eps) + h.weight_decay * x[i]);
            }
        }
        MarsVariant::Lion => {
            for i in 0..x.len() {
                delta[i] = -h.lr * (sign(st.m[i]) + h.weight_decay * x[i]);
            }
        }
        MarsVariant::Shampoo => {
            let o = if st.m.iter().all(|v| *v == 0.0) {
                None
            } else {
                let m = Matrix::new(rows, cols, st.m.clone())?;
                Some(newton_schulz_orthogonalize(&m, h.ns_iters, h.ns_coeffs)?)
            };
            for i in 0..x.len() {
                let oi = o.as_ref().map_or(0.0, |o| o.data()[i]);
                delta[i] = -h.lr * (oi + h.weight_decay * x[i]);
            }
        }
    }
    for (xi, di) in x.iter_mut().zip(&delta) {
        *xi += di;
    }
    st.g_prev.copy_from_slice(g);
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(variant: MarsVariant) -> MarsHyper {
        MarsHyper {
            variant,
            lr: 0.01,
            weight_decay: 0.0,
            eps: 1e-8,
            beta1: 0.95,
            beta2: 0.99,
            eta: 0.025,
            ns_iters: 5,
            ns_coeffs: NsCoefficients::default(),
        }
    }

    #[test]
    fn equal_consecutive_gradients_need_no_correction() {
        let g = [0.1, -0.2, 0.3];
        assert_eq!(mars_correction(&g, &g, &hyper(MarsVariant::Adamw)), g.to_vec());
    }

    #[test]
    fn large_corrections_are_normalized() {
        let c = mars_correction(&[1.2, 1.6], &[1.2, 1.6], &hyper(MarsVariant::Lion));
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        let c = mars_correction(&[1.2, 1.6], &[1.2, 1.6], &hyper(MarsVariant::Shampoo));
        assert_eq!(c, vec![1.2, 1.6]);
    }

    #[test]
    fn previous_gradient_is_remembered() {
        let mut x = vec![0.0; 4];
        let mut st = MarsState::new(4);
        let g = [0.5, -0.5, 0.25, 1.0];
        mars_step(&mut x, &g, &mut st, &hyper(MarsVariant::Shampoo), 2, 2).unwrap();
        assert_eq!(st.g_prev, g.to_vec());
    }
}
