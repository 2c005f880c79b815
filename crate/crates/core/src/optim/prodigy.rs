//! Prodigy. The distance estimate `d` is shared by every block of a run.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProdigyBlockState {
    pub s: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProdigyState {
    /// Non-decreasing over the run.
    pub d: f64,
    pub r: f64,
    pub blocks: Vec<ProdigyBlockState>,
    pub t: u64,
}

pub const DEFAULT_D0: f64 = 1e-6;

impl ProdigyState {
    pub fn new<'a>(x0: impl IntoIterator<Item = &'a [f64]>, d0: f64) -> Self {
        let blocks = x0
            .into_iter()
            .map(|x| ProdigyBlockState {
                s: vec![0.0; x.len()],
                m: vec![0.0; x.len()],
                v: vec![0.0; x.len()],
                x0: x.to_vec(),
            })
            .collect();
        Self {
            d: d0,
            r: 0.0,
            blocks,
            t: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d.is_finite()
            && self.r.is_finite()
            && self.blocks.iter().all(|b| {
                b.s.iter()
                    .chain(&b.m)
                    .chain(&b.v)
                    .all(|x| x.is_finite())
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProdigyHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub bias_correction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProdigyOutcome {
    pub deltas: Vec<Vec<f64>>,
    /// `γ_t·d_t` with the `d` used for this step.
    pub effective_lr: f64,
    pub d: f64,
}

pub fn prodigy_step(xs: &mut [&mut [f64]], gs: &[&[f64]], st: &mut ProdigyState, h: &ProdigyHyper) -> ProdigyOutcome {
    st.t += 1;
    let d = st.d;
    let lr_t = if h.bias_correction {
        h.lr * (1.0 - h.beta2.powi(st.t as i32)).sqrt() / (1.0 - h.beta1.powi(st.t as i32))
    } else {
        h.lr
    };
    let sqrt_b2 = h.beta2.sqrt();
    let d2 = d * d;

    let mut inner = 0.0;
    for ((x, g), b) in xs.iter().zip(gs).zip(&st.blocks) {
        for i in 0..x.len() {
            inner += g[i] * (b.x0[i] - x[i]);
        }
    }
    st.r = sqrt_b2 * st.r + (1.0 - sqrt_b2) * lr_t * d2 * inner;

    let mut s_l1 = 0.0;
    let mut deltas = Vec::with_capacity(xs.len());
    for ((x, g), b) in xs.iter_mut().zip(gs).zip(&mut st.blocks) {
        let mut delta = vec![0.0; x.len()];
        for i in 0..x.len() {
            b.m[i] = h.beta1 * b.m[i] + (1.0 - h.beta1) * d * g[i];
            b.v[i] = h.beta2 * b.v[i] + (1.0 - h.beta2) * d2 * g[i] * g[i];
            b.s[i] = sqrt_b2 * b.s[i] + (1.0 - sqrt_b2) * lr_t * d2 * g[i];
            s_l1 += b.s[i].abs();
            delta[i] = -lr_t * d * (b.m[i] / (b.v[i].sqrt() + d * h.eps) + h.weight_decay * x[i]);
            x[i] += delta[i];
        }
        deltas.push(delta);
    }
    // r = 0 whenever s = 0, so the guard only skips a 0/0.
    if s_l1 > 0.0 {
        st.d = d.max(st.r / s_l1);
    }
    ProdigyOutcome {
        deltas,
        effective_lr: lr_t * d,
        d,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn hyper() -> ProdigyHyper {
        ProdigyHyper {
            lr: 1.0,
            weight_decay: 0.0,
            eps: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            bias_correction: true,
        }
    }

    #[test]
    fn first_step_keeps_initial_distance() {
        let mut x = vec![1.0, 2.0];
        let mut st = ProdigyState::new([x.as_slice()], DEFAULT_D0);
        let out = prodigy_step(&mut [x.as_mut_slice()], &[&[0.3, -0.7]], &mut st, &hyper());
        assert_eq!(st.r, 0.0);
        assert_eq!(out.d, 1e-6);
        assert_eq!(st.d, 1e-6);
    }

    #[test]
    fn distance_grows_and_never_shrinks() {
        let mut rng = Rng::for_stream(6, 6);
        let mut x = rng.normals(5);
        let mut st = ProdigyState::new([x.as_slice()], DEFAULT_D0);
        let mut last = st.d;
        for _ in 0..300 {
            // Gradient of ½‖x − 3‖².
            let g: Vec<f64> = x.iter().map(|v| v - 3.0).collect();
            prodigy_step(&mut [x.as_mut_slice()], &[&g], &mut st, &hyper());
            assert!(st.d >= last);
            last = st.d;
        }
        assert!(st.d > 1e-3);
    }
}
