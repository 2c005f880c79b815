//! Quintic Newton-Schulz iteration towards the orthogonal polar factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gram_rows, matmul, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for NsCoefficients {
    fn default() -> Self {
        Self {
            a: 3.4445,
            b: -4.7750,
            c: 2.0315,
        }
    }
}

pub const DEFAULT_NS_ITERS: usize = 5;

/// `w₀ = g/‖g‖_F`, `w ← a·w + b·(wwᵀ)w + c·(wwᵀ)²w`.
///
/// Tall inputs are iterated on their transpose so the Gram matrix is always
/// the smaller side.
pub fn newton_schulz_orthogonalize(g: &Matrix, iters: usize, k: NsCoefficients) -> Result<Matrix> {
    if !g.is_finite() {
        return Err(Error::Numerical("non-finite Newton-Schulz input".into()));
    }
    let norm = g.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::contract("Newton-Schulz input is the zero matrix"));
    }
    let transposed = g.rows() > g.cols();
    let mut w = if transposed { g.transpose() } else { g.clone() };
    w = w.scaled(1.0 / norm);
    for _ in 0..iters {
        let a = gram_rows(&w);
        // a is symmetric, so a·a = a·aᵀ.
        let mut poly = gram_rows(&a).scaled(k.c);
        poly.add_scaled(k.b, &a)?;
        let mut next = matmul(&poly, &w)?;
        next.add_scaled(k.a, &w)?;
        w = next;
    }
    Ok(if transposed { w.transpose() } else { w })
}
