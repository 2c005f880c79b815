//! Schedule-free AdamW.
//!
//! The block's values always hold `y`, the point where the next gradient must
//! be evaluated. The averaged iterate used for evaluation is `x_avg`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFreeState {
    pub z: Vec<f64>,
    pub x_avg: Vec<f64>,
    pub v: Vec<f64>,
    /// `Σ γ_t²` over all past steps.
    pub lr_sq_sum: f64,
    pub t: u64,
    /// The `y` handed out after the previous step.
    pub y: Vec<f64>,
}

impl ScheduleFreeState {
    pub fn new(x0: &[f64]) -> Self {
        Self {
            z: x0.to_vec(),
            x_avg: x0.to_vec(),
            v: vec![0.0; x0.len()],
            lr_sq_sum: 0.0,
            t: 0,
            y: x0.to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.z
            .iter()
            .chain(&self.x_avg)
            .chain(&self.v)
            .all(|x| x.is_finite())
            && self.lr_sq_sum.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleFreeHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub warmup_steps: u64,
}

/// `g` must be the gradient at the current `y`, which is what `x` holds.
pub fn sfadamw_step(
    x: &mut [f64],
    g: &[f64],
    st: &mut ScheduleFreeState,
    h: &ScheduleFreeHyper,
) -> Result<Vec<f64>> {
    if x != st.y.as_slice() {
        return Err(Error::contract(
            "schedule-free gradient must be taken at the interpolated point y",
        ));
    }
    st.t += 1;
    let t = st.t as f64;
    let warm = if h.warmup_steps == 0 {
        1.0
    } else {
        (t / h.warmup_steps as f64).min(1.0)
    };
    let lr_t = h.lr * (1.0 - h.beta2.powi(st.t as i32)).sqrt() * warm;
    st.lr_sq_sum += lr_t * lr_t;
    let c = if st.lr_sq_sum > 0.0 {
        lr_t * lr_t / st.lr_sq_sum
    } else {
        0.0
    };
    let mut delta = vec![0.0; x.len()];
    for i in 0..x.len() {
        let y = x[i];
        st.v[i] = h.beta2 * st.v[i] + (1.0 - h.beta2) * g[i] * g[i];
        st.z[i] -= lr_t * (g[i] / (st.v[i].sqrt() + h.eps) + h.weight_decay * y);
        st.x_avg[i] = (1.0 - c) * st.x_avg[i] + c * st.z[i];
        let y_next = (1.0 - h.beta1) * st.z[i] + h.beta1 * st.x_avg[i];
        delta[i] = y_next - y;
        x[i] = y_next;
    }
    st.y.copy_from_slice(x);
    Ok(delta)
}
