use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::contract(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            let row = row.as_ref();
            if row.len() != c {
                return Err(Error::contract("ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: r,
            cols: c,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: f64, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::contract(format!(
                "shape mismatch {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = self.clone();
        out.add_scaled(-1.0, other)?;
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Rows per register block.
const MR: usize = 4;
/// Columns per register block and packed panel.
const NR: usize = 4;

/// Shared kernel for `c = a · b` where `b_at(p, j)` reads `b[p][j]`.
///
/// Each output entry starts from zero and adds `a[i][p]·b[p][j]` for `p`
/// ascending, so results are bit-identical to the textbook triple loop.
/// With `upper_only`, register blocks entirely below the diagonal are
/// skipped.
fn gemm(a: &Matrix, n: usize, b_at: impl Fn(usize, usize) -> f64, upper_only: bool) -> Vec<f64> {
    let (m, k) = (a.rows, a.cols);
    let mut c = vec![0.0; m * n];
    let mut panel = vec![0.0; k * NR];
    for j0 in (0..n).step_by(NR) {
        let w = NR.min(n - j0);
        for p in 0..k {
            let dst = &mut panel[p * NR..(p + 1) * NR];
            for (jj, d) in dst.iter_mut().enumerate() {
                *d = if jj < w { b_at(p, j0 + jj) } else { 0.0 };
            }
        }
        let row_end = if upper_only { m.min(j0 + w) } else { m };
        let mut i0 = 0;
        while i0 < row_end {
            let h = MR.min(row_end - i0);
            let mut acc = [[0.0f64; NR]; MR];
            if h == MR {
                let rows: [&[f64]; MR] = std::array::from_fn(|r| &a.data[(i0 + r) * k..(i0 + r + 1) * k]);
                for p in 0..k {
                    let bp: &[f64; NR] = panel[p * NR..(p + 1) * NR].try_into().expect("panel width");
                    for r in 0..MR {
                        let av = rows[r][p];
                        for jj in 0..NR {
                            acc[r][jj] += av * bp[jj];
                        }
                    }
                }
            } else {
                for r in 0..h {
                    let row = &a.data[(i0 + r) * k..(i0 + r + 1) * k];
                    for (p, &av) in row.iter().enumerate() {
                        let bp = &panel[p * NR..(p + 1) * NR];
                        for jj in 0..NR {
                            acc[r][jj] += av * bp[jj];
                        }
                    }
                }
            }
            for r in 0..h {
                c[(i0 + r) * n + j0..(i0 + r) * n + j0 + w].copy_from_slice(&acc[r][..w]);
            }
            i0 += MR;
        }
    }
    c
}

/// Matrix product in `f64`, bit-identical to the textbook triple loop.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::contract(format!(
            "matmul dimension mismatch: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let n = b.cols;
    let data = gemm(a, n, |p, j| b.data[p * n + j], false);
    Ok(Matrix {
        rows: a.rows,
        cols: n,
        data,
    })
}

/// `a * aᵀ`, exploiting symmetry of the result.
///
/// Bit-identical to `matmul(a, &a.transpose())`, and exactly symmetric.
pub fn gram_rows(a: &Matrix) -> Matrix {
    let (m, k) = (a.rows, a.cols);
    let mut c = gemm(a, m, |p, j| a.data[j * k + p], true);
    for i in 0..m {
        for j in 0..i {
            c[i * m + j] = c[j * m + i];
        }
    }
    Matrix {
        rows: m,
        cols: m,
        data: c,
    }
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                c.set(i, j, s);
            }
        }
        c
    }

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::new(r, c, rng.normals(r * c)).unwrap()
    }

    #[test]
    fn identity_product() {
        let i2 = Matrix::identity(2);
        assert_eq!(matmul(&i2, &i2).unwrap(), i2);
    }

    #[test]
    fn hand_product() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matches_triple_loop_exactly() {
        let mut rng = Rng::for_stream(7, 1);
        let a = random(&mut rng, 5, 3);
        let b = random(&mut rng, 3, 4);
        assert_eq!(matmul(&a, &b).unwrap(), naive(&a, &b));
        // Shapes that cross the tile boundaries.
        let a = random(&mut rng, 9, 300);
        let b = random(&mut rng, 300, 270);
        assert_eq!(matmul(&a, &b).unwrap(), naive(&a, &b));
        // Remainders in both register-block directions.
        let a = random(&mut rng, 13, 7);
        let b = random(&mut rng, 7, 11);
        assert_eq!(matmul(&a, &b).unwrap(), naive(&a, &b));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Contract(_))));
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 2)), 0.0);
        assert_eq!(frobenius_norm(&Matrix::identity(2)), 2f64.sqrt());
        let v = Matrix::from_rows(&[[3.0], [4.0]]).unwrap();
        assert_eq!(frobenius_norm(&v), 5.0);
    }

    #[test]
    fn gram_matches_product_with_transpose() {
        let mut rng = Rng::for_stream(3, 9);
        for (r, c) in [(6, 4), (1, 9), (300, 140), (270, 300)] {
            let a = random(&mut rng, r, c);
            let g = gram_rows(&a);
            assert_eq!(g, matmul(&a, &a.transpose()).unwrap());
            assert_eq!(g, g.transpose());
        }
    }


    #[test]
    fn associativity() {
        let mut rng = Rng::for_stream(11, 0);
        for _ in 0..10 {
            let a = random(&mut rng, 4, 6);
            let b = random(&mut rng, 6, 3);
            let c = random(&mut rng, 3, 5);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let diff = left.sub(&right).unwrap().frobenius_norm();
            assert!(diff <= 1e-9 * left.frobenius_norm().max(1.0));
        }
    }
}
