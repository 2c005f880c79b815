//! AdamW, ADOPT and AdEMAMix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedules::EmaScheduleSpec;

/// Per-step hyperparameters shared by the Adam-like rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

/// One AdamW step; returns the applied parameter change.
pub fn adamw_step(x: &mut [f64], g: &[f64], st: &mut AdamState, h: &AdamHyper) -> Vec<f64> {
    st.t += 1;
    let bc1 = 1.0 - h.beta1.powi(st.t as i32);
    let bc2 = 1.0 - h.beta2.powi(st.t as i32);
    let mut delta = vec![0.0; x.len()];
    for i in 0..x.len() {
        st.m[i] = h.beta1 * st.m[i] + (1.0 - h.beta1) * g[i];
        st.v[i] = h.beta2 * st.v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let m_hat = st.m[i] / bc1;
        let v_hat = st.v[i] / bc2;
        delta[i] = -h.lr * (m_hat / (v_hat.sqrt() + h.eps) + h.weight_decay * x[i]);
        x[i] += delta[i];
    }
    delta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdoptState {
    pub m: Vec<f64>,
    /// `None` until the first gradient has been observed.
    pub v: Option<Vec<f64>>,
    pub t: u64,
}

impl AdoptState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: None,
            t: 0,
        }
    }

    /// Seeds the second moment with `g₀ ⊙ g₀` without moving parameters.
    pub fn prime(&mut self, g0: &[f64]) {
        self.v = Some(g0.iter().map(|g| g * g).collect());
    }

    pub fn is_primed(&self) -> bool {
        self.v.is_some()
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|x| x.is_finite())
            && self.v.as_ref().is_none_or(|v| v.iter().all(|x| x.is_finite()))
    }
}

pub fn adopt_step(
    x: &mut [f64],
    g: &[f64],
    st: &mut AdoptState,
    h: &AdamHyper,
) -> Result<Vec<f64>> {
    let v = st
        .v
        .as_mut()
        .ok_or_else(|| Error::contract("ADOPT stepped before its second moment was initialized"))?;
    st.t += 1;
    let clip = (st.t as f64).powf(0.25);
    let mut delta = vec![0.0; x.len()];
    for i in 0..x.len() {
        let scaled = g[i] / v[i].sqrt().max(h.eps);
        st.m[i] = h.beta1 * st.m[i] + (1.0 - h.beta1) * scaled.clamp(-clip, clip);
        delta[i] = -h.lr * (st.m[i] + h.weight_decay * x[i]);
        x[i] += delta[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
    }
    Ok(delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdemamixState {
    pub m: Vec<f64>,
    pub m_slow: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdemamixState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            m_slow: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.m
            .iter()
            .chain(&self.m_slow)
            .chain(&self.v)
            .all(|x| x.is_finite())
    }
}

/// AdEMAMix step. The slow EMA is not bias corrected.
pub fn ademamix_step(
    x: &mut [f64],
    g: &[f64],
    st: &mut AdemamixState,
    h: &AdamHyper,
    ema: &EmaScheduleSpec,
) -> Result<Vec<f64>> {
    st.t += 1;
    let beta3 = ema.beta3_at(st.t)?;
    let alpha = ema.alpha_at(st.t);
    let bc1 = 1.0 - h.beta1.powi(st.t as i32);
    let bc2 = 1.0 - h.beta2.powi(st.t as i32);
    let mut delta = vec![0.0; x.len()];
    for i in 0..x.len() {
        st.m[i] = h.beta1 * st.m[i] + (1.0 - h.beta1) * g[i];
        st.m_slow[i] = beta3 * st.m_slow[i] + (1.0 - beta3) * g[i];
        st.v[i] = h.beta2 * st.v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let m_hat = st.m[i] / bc1;
        let v_hat = st.v[i] / bc2;
        delta[i] = -h.lr
            * ((m_hat + alpha * st.m_slow[i]) / (v_hat.sqrt() + h.eps) + h.weight_decay * x[i]);
        x[i] += delta[i];
    }
    Ok(delta)
}
