//! Sophia with the Gauss-Newton-Bartlett Hessian-diagonal estimate.

use serde::{Deserialize, Serialize};

use crate::numerics::sign;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SophiaState {
    pub m: Vec<f64>,
    /// EMA of the Hessian-diagonal estimate; never negative.
    pub h: Vec<f64>,
    pub t: u64,
}

impl SophiaState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            h: vec![0.0; len],
            t: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().chain(&self.h).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SophiaHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rho: f64,
    pub estimator_freq: u64,
}

/// Whether step `t` (1-based) refreshes the Hessian estimate.
pub fn sophia_refreshes(t: u64, freq: u64) -> bool {
    freq > 0 && t % freq == 1 % freq
}

/// `resampled` is the gradient against labels drawn from the model's own
/// predictions; it is read only on refresh steps.
pub fn sophia_step(
    x: &mut [f64],
    g: &[f64],
    resampled: Option<&[f64]>,
    batch_size: usize,
    st: &mut SophiaState,
    hp: &SophiaHyper,
) -> Vec<f64> {
    st.t += 1;
    let b = batch_size as f64;
    if let Some(g_hat) = resampled {
        for i in 0..x.len() {
            let h_hat = b * g_hat[i] * g_hat[i];
            st.h[i] = hp.beta2 * st.h[i] + (1.0 - hp.beta2) * h_hat;
        }
    }
    let mut delta = vec![0.0; x.len()];
    for i in 0..x.len() {
        st.m[i] = hp.beta1 * st.m[i] + (1.0 - hp.beta1) * g[i];
        let ratio = (st.m[i].abs() / (hp.rho * st.h[i] + hp.eps)).min(1.0);
        delta[i] = -hp.lr * (sign(st.m[i]) * ratio + hp.weight_decay * x[i]);
        x[i] += delta[i];
    }
    delta
}
