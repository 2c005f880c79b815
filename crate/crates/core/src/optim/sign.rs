//! Lion and Signum.

use serde::{Deserialize, Serialize};

use crate::numerics::sign;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignState {
    pub m: Vec<f64>,
    pub t: u64,
}

impl SignState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            t: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LionHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// Lion: the sign is taken of an interpolation, and the buffer is refreshed
/// after the parameters move.
pub fn lion_step(x: &mut [f64], g: &[f64], st: &mut SignState, h: &LionHyper) -> Vec<f64> {
    st.t += 1;
    let mut delta = vec![0.0; x.len()];
    for i in 0..x.len() {
        let u = sign(h.beta1 * st.m[i] + (1.0 - h.beta1) * g[i]);
        delta[i] = -h.lr * (u + h.weight_decay * x[i]);
        x[i] += delta[i];
        st.m[i] = h.beta2 * st.m[i] + (1.0 - h.beta2) * g[i];
    }
    delta
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignumHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// `m ← βm + (1−τ)g`; `τ = β` gives an EMA buffer.
    pub dampening: f64,
    /// Sign of `βm + g` instead of `m`.
    pub nesterov: bool,
    /// Fold `λx` into the gradient instead of decaying the weights directly.
    pub coupled_weight_decay: bool,
}

pub fn signum_step(x: &mut [f64], g: &[f64], st: &mut SignState, h: &SignumHyper) -> Vec<f64> {
    st.t += 1;
    let beta = h.momentum;
    let mut delta = vec![0.0; x.len()];
    for i in 0..x.len() {
        let gi = if h.coupled_weight_decay {
            g[i] + h.weight_decay * x[i]
        } else {
            g[i]
        };
        st.m[i] = beta * st.m[i] + (1.0 - h.dampening) * gi;
        let u = if h.nesterov {
            sign(beta * st.m[i] + gi)
        } else {
            sign(st.m[i])
        };
        delta[i] = if h.coupled_weight_decay {
            -h.lr * u
        } else {
            -h.lr * (u + h.weight_decay * x[i])
        };
        x[i] += delta[i];
    }
    delta
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signum(momentum: f64) -> SignumHyper {
        SignumHyper {
            lr: 0.1,
            weight_decay: 0.0,
            momentum,
            dampening: 0.0,
            nesterov: true,
            coupled_weight_decay: false,
        }
    }

    #[test]
    fn lion_scalar_oracle() {
        let h = LionHyper {
            lr: 0.1,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.99,
        };
        let mut x = vec![0.0];
        let mut st = SignState::new(1);
        lion_step(&mut x, &[1.5], &mut st, &h);
        assert_eq!(x[0], -0.1);
        assert!((st.m[0] - 0.015).abs() < 1e-15);
    }

    #[test]
    fn lion_zero_gradient_has_no_sign_contribution() {
        let h = LionHyper {
            lr: 0.1,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.99,
        };
        let mut x = vec![2.0];
        lion_step(&mut x, &[0.0], &mut SignState::new(1), &h);
        assert_eq!(x[0], 2.0);
    }

    #[test]
    fn signum_scalar_oracle() {
        let mut x = vec![0.0];
        let mut st = SignState::new(1);
        signum_step(&mut x, &[-3.0], &mut st, &signum(0.95));
        assert_eq!(st.m[0], -3.0);
        assert_eq!(x[0], 0.1);
    }

    #[test]
    fn signum_dampening_gives_ema_buffer() {
        let h = SignumHyper {
            dampening: 0.9,
            nesterov: false,
            ..signum(0.9)
        };
        let mut st = SignState::new(1);
        let mut x = vec![0.0];
        let mut reference = 0.0;
        for g in [1.0, -2.0, 0.5] {
            signum_step(&mut x, &[g], &mut st, &h);
            reference = 0.9 * reference + (1.0 - 0.9) * g;
            assert_eq!(st.m[0], reference);
        }
    }

    #[test]
    fn coupled_decay_flips_the_sign() {
        let h = SignumHyper {
            weight_decay: 0.5,
            coupled_weight_decay: true,
            ..signum(0.0)
        };
        // g + λx = -1 + 0.5·4 > 0, so the step moves against the gradient.
        let mut x = vec![4.0];
        signum_step(&mut x, &[-1.0], &mut SignState::new(1), &h);
        assert_eq!(x[0], 3.9);
    }
}
