//! Dense kernels and deterministic randomness shared by every other module.

mod linalg;
mod matrix;
mod rng;

pub use linalg::{
    qr_orthonormal, qr_orthonormal_completed, svd_singular_values, sym_eigen, sym_eigenbasis,
};
pub use matrix::{frobenius_norm, gram_rows, matmul, Matrix};
pub use rng::{label_id, mix64, rng_normal, stream_id, Rng};

/// Sign with `sign(0) = 0`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}
