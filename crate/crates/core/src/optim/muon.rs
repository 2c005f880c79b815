//! Matrix paths of Muon and D-Muon. Non-matrix blocks are routed to AdamW by
//! the caller.

use serde::{Deserialize, Serialize};

use super::newton_schulz::{newton_schulz_orthogonalize, NsCoefficients};
use crate::error::Result;
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuonState {
    pub m: Vec<f64>,
    pub t: u64,
}

impl MuonState {
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
pub struct MuonHyper {
    pub lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub ns_iters: usize,
    pub ns_coeffs: NsCoefficients,
}

/// Orthogonalized momentum direction for a `rows × cols` block, or `None`
/// when the direction is exactly zero.
fn orthogonalized_momentum(
    g: &[f64],
    st: &mut MuonState,
    h: &MuonHyper,
    rows: usize,
    cols: usize,
) -> Result<Option<Matrix>> {
    st.t += 1;
    let beta = h.momentum;
    let mut dir = vec![0.0; g.len()];
    for i in 0..g.len() {
        st.m[i] = beta * st.m[i] + g[i];
        dir[i] = if h.nesterov { beta * st.m[i] + g[i] } else { st.m[i] };
    }
    if dir.iter().all(|d| *d == 0.0) {
        return Ok(None);
    }
    let dir = Matrix::new(rows, cols, dir)?;
    newton_schulz_orthogonalize(&dir, h.ns_iters, h.ns_coeffs).map(Some)
}

/// `x ← x − γ·NS(βm + g)`; weight decay never touches this path.
pub fn muon_matrix_step(
    x: &mut [f64],
    g: &[f64],
    st: &mut MuonState,
    h: &MuonHyper,
    rows: usize,
    cols: usize,
) -> Result<Vec<f64>> {
    let mut delta = vec![0.0; x.len()];
    if let Some(o) = orthogonalized_momentum(g, st, h, rows, cols)? {
        for ((xi, di), oi) in x.iter_mut().zip(&mut delta).zip(o.data()) {
            *di = -h.lr * oi;
            *xi += *di;
        }
    }
    Ok(delta)
}

/// `x ← x − γ(s·√max(rows, cols)·NS(βm + g) + λx)` with `s = rms_scale`.
pub fn dmuon_matrix_step(
    x: &mut [f64],
    g: &[f64],
    st: &mut MuonState,
    h: &MuonHyper,
    weight_decay: f64,
    rms_scale: f64,
    rows: usize,
    cols: usize,
) -> Result<Vec<f64>> {
    let scale = rms_scale * (rows.max(cols) as f64).sqrt();
    let o = orthogonalized_momentum(g, st, h, rows, cols)?;
    let mut delta = vec![0.0; x.len()];
    for i in 0..x.len() {
        let oi = o.as_ref().map_or(0.0, |o| o.data()[i]);
        delta[i] = -h.lr * (scale * oi + weight_decay * x[i]);
        x[i] += delta[i];
    }
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn hyper() -> MuonHyper {
        MuonHyper {
            lr: 0.01,
            momentum: 0.95,
            nesterov: true,
            ns_iters: 5,
            ns_coeffs: NsCoefficients::default(),
        }
    }

    #[test]
    fn dmuon_is_scaled_muon_without_decay() {
        let mut rng = Rng::for_stream(21, 0);
        let n = 6;
        let mut xa = rng.normals(n * n);
        let mut xb = xa.clone();
        let mut sa = MuonState::new(n * n);
        let mut sb = MuonState::new(n * n);
        for _ in 0..3 {
            let g = rng.normals(n * n);
            let da = muon_matrix_step(&mut xa, &g, &mut sa, &hyper(), n, n).unwrap();
            let db = dmuon_matrix_step(&mut xb, &g, &mut sb, &hyper(), 0.0, 0.2, n, n).unwrap();
            let s = 0.2 * (n as f64).sqrt();
            for (a, b) in da.iter().zip(&db) {
                assert!((a * s - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_direction_means_no_motion() {
        let mut x = vec![1.0; 4];
        let d = muon_matrix_step(&mut x, &[0.0; 4], &mut MuonState::new(4), &hyper(), 2, 2).unwrap();
        assert_eq!(d, vec![0.0; 4]);
    }
}
