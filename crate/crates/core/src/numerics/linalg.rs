//! Factorizations used by the preconditioned optimizers.
//!
//! QR and the symmetric eigensolver are backed by `nalgebra`; this module
//! pins the sign and ordering conventions so that optimizer trajectories do
//! not depend on which basis representative the backend happens to return.

use nalgebra::DMatrix;

use super::matrix::Matrix;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-12;
const EIGEN_MAX_ITERS: usize = 100_000;

fn to_dmatrix(a: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.data())
}

fn from_dmatrix(m: &DMatrix<f64>) -> Matrix {
    let (r, c) = m.shape();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(m[(i, j)]);
        }
    }
    Matrix::new(r, c, data).expect("shape preserved")
}

/// Householder QR returning `(Q, diag(R))` with `Q` thin and the diagonal of
/// `R` made nonnegative by flipping the matching columns of `Q`.
fn householder_q(a: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    if a.rows() < a.cols() {
        return Err(Error::contract(format!(
            "QR needs rows >= cols, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let qr = to_dmatrix(a).qr();
    let q = qr.q();
    let r = qr.r();
    let mut q = from_dmatrix(&q);
    let mut diag = Vec::with_capacity(a.cols());
    for j in 0..a.cols() {
        let d = r[(j, j)];
        if d < 0.0 {
            for i in 0..q.rows() {
                let v = q.get(i, j);
                q.set(i, j, -v);
            }
        }
        diag.push(d.abs());
    }
    Ok((q, diag))
}

/// Orthonormal factor of a full-column-rank matrix, with `diag(R) >= 0`.
pub fn qr_orthonormal(a: &Matrix) -> Result<Matrix> {
    let (q, diag) = householder_q(a)?;
    let scale = a.frobenius_norm();
    let tol = RANK_TOL * scale.max(f64::MIN_POSITIVE);
    if scale == 0.0 || diag.iter().any(|d| *d <= tol) {
        return Err(Error::Degenerate(
            "QR input is rank deficient".to_string(),
        ));
    }
    Ok(q)
}

/// Like [`qr_orthonormal`] but accepts rank-deficient input; columns that
/// span no new direction are completed to an orthonormal set by the
/// Householder reflectors.
///
/// Preconditioner statistics built from a handful of outer products are
/// routinely rank deficient, so basis refreshes go through this variant.
pub fn qr_orthonormal_completed(a: &Matrix) -> Result<Matrix> {
    if !a.is_finite() {
        return Err(Error::Numerical("non-finite QR input".to_string()));
    }
    householder_q(a).map(|(q, _)| q)
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::contract(format!(
            "symmetric input must be square, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::Numerical("non-finite eigen input".to_string()));
    }
    let n = a.rows();
    let scale = a.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.get(i, j) - a.get(j, i)).abs() > SYMMETRY_TOL * scale {
                return Err(Error::contract(format!(
                    "matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    Ok(())
}

/// Eigenvalues (descending) and orthonormal eigenvectors (as columns) of a
/// symmetric matrix.
///
/// Each eigenvector is signed so that its largest-magnitude component is
/// positive (the first such component on ties).
pub fn sym_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    check_symmetric(a)?;
    let n = a.rows();
    if n == 0 {
        return Ok((Vec::new(), Matrix::zeros(0, 0)));
    }
    let eig = nalgebra::SymmetricEigen::try_new(to_dmatrix(a), f64::EPSILON, EIGEN_MAX_ITERS)
        .ok_or_else(|| {
            Error::Numerical(format!(
                "symmetric eigensolver did not converge within {EIGEN_MAX_ITERS} iterations"
            ))
        })?;
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the backend's order among equal eigenvalues.
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut values = Vec::with_capacity(n);
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let v = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..n {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors.set(i, col, sign * v[i]);
        }
    }
    Ok((values, vectors))
}

/// Orthonormal eigenvectors of a symmetric matrix ordered by descending
/// eigenvalue.
pub fn sym_eigenbasis(a: &Matrix) -> Result<Matrix> {
    sym_eigen(a).map(|(_, v)| v)
}

/// Singular values in descending order, via the eigenvalues of `aᵀa`.
pub fn svd_singular_values(a: &Matrix) -> Vec<f64> {
    let ata = to_dmatrix(&a.transpose()) * to_dmatrix(a);
    let ata = (&ata + ata.transpose()) * 0.5;
    let mut values: Vec<f64> = ata
        .symmetric_eigenvalues()
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .collect();
    values.sort_by(|x, y| y.total_cmp(x));
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{matmul, Rng};

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::new(r, c, rng.normals(r * c)).unwrap()
    }

    fn random_symmetric(rng: &mut Rng, n: usize) -> Matrix {
        let a = random(rng, n, n);
        let mut s = a.clone();
        s.add_scaled(1.0, &a.transpose()).unwrap();
        s.scaled(0.5)
    }

    fn orthonormality_defect(q: &Matrix) -> f64 {
        let qtq = matmul(&q.transpose(), q).unwrap();
        qtq.sub(&Matrix::identity(q.cols())).unwrap().frobenius_norm()
    }

    #[test]
    fn qr_of_identity_and_positive_diagonal() {
        assert_eq!(qr_orthonormal(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        let d = Matrix::from_diag(&[2.0, 3.0]);
        let q = qr_orthonormal(&d).unwrap();
        assert!(q.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn qr_reconstructs_random_input() {
        let mut rng = Rng::for_stream(5, 2);
        for _ in 0..20 {
            let a = random(&mut rng, 4, 4);
            let q = qr_orthonormal(&a).unwrap();
            assert!(orthonormality_defect(&q) <= 1e-12);
            let r = matmul(&q.transpose(), &a).unwrap();
            for i in 0..4 {
                assert!(r.get(i, i) >= 0.0);
                for j in 0..i {
                    assert!(r.get(i, j).abs() < 1e-12);
                }
            }
            let back = matmul(&q, &r).unwrap();
            assert!(back.sub(&a).unwrap().max_abs() <= 1e-10);
        }
    }

    #[test]
    fn qr_rejects_rank_deficient_input() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
        assert!(matches!(qr_orthonormal(&a), Err(Error::Degenerate(_))));
        let q = qr_orthonormal_completed(&a).unwrap();
        assert!(orthonormality_defect(&q) <= 1e-12);
    }

    #[test]
    fn qr_rejects_wide_input() {
        assert!(matches!(
            qr_orthonormal(&Matrix::zeros(2, 3)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn eigenbasis_conventions() {
        assert_eq!(sym_eigenbasis(&Matrix::identity(2)).unwrap(), Matrix::identity(2));
        let v = sym_eigenbasis(&Matrix::from_diag(&[1.0, 9.0])).unwrap();
        assert_eq!(v.column(0), vec![0.0, 1.0]);
        assert_eq!(v.column(1), vec![1.0, 0.0]);
    }

    #[test]
    fn eigen_residual_and_reconstruction() {
        let mut rng = Rng::for_stream(13, 4);
        let a = random_symmetric(&mut rng, 5);
        let (values, v) = sym_eigen(&a).unwrap();
        assert!(values.windows(2).all(|w| w[0] >= w[1]));
        let av = matmul(&a, &v).unwrap();
        let vl = matmul(&v, &Matrix::from_diag(&values)).unwrap();
        assert!(av.sub(&vl).unwrap().max_abs() <= 1e-9);
        let recon = matmul(&vl, &v.transpose()).unwrap();
        assert!(recon.sub(&a).unwrap().frobenius_norm() <= 1e-9 * a.frobenius_norm());
        for j in 0..5 {
            let col = v.column(j);
            let pivot = col
                .iter()
                .cloned()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn eigen_rejects_asymmetric_input() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigenbasis(&a), Err(Error::Contract(_))));
    }

    #[test]
    fn singular_value_examples() {
        assert_eq!(svd_singular_values(&Matrix::identity(3)), vec![1.0, 1.0, 1.0]);
        let s = svd_singular_values(&Matrix::from_diag(&[2.0, 0.5]));
        assert!((s[0] - 2.0).abs() < 1e-15 && (s[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singular_values_square_to_gram_eigenvalues() {
        let mut rng = Rng::for_stream(17, 0);
        let a = random(&mut rng, 3, 3);
        let s = svd_singular_values(&a);
        let (l, _) = sym_eigen(&matmul(&a.transpose(), &a).unwrap()).unwrap();
        for (si, li) in s.iter().zip(&l) {
            assert!((si * si - li).abs() <= 1e-9);
        }
    }
}
