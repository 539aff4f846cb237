use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
///
/// Entries are checked for finiteness when a matrix is built from caller data;
/// arithmetic results are not re-checked.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::BadShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                row: idx / cols,
                col: idx % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::BadShape {
                    rows: rows.len(),
                    cols,
                    len: data.len() + r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Every row equal to `row` (the broadcast `1_N rowᵀ`).
    pub fn broadcast_row(n_rows: usize, row: &[f64]) -> Self {
        assert!(n_rows > 0 && !row.is_empty(), "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(n_rows * row.len());
        for _ in 0..n_rows {
            data.extend_from_slice(row);
        }
        Self {
            rows: n_rows,
            cols: row.len(),
            data,
        }
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let (n, m) = (self.rows, rhs.cols);
        let mut out = vec![0.0; n * m];
        // i-k-j order: each output entry accumulates over k in ascending order.
        for (i, out_row) in out.chunks_exact_mut(m).enumerate() {
            for (k, &a_ik) in self.row(i).iter().enumerate() {
                for (o, &b_kj) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a_ik * b_kj;
                }
            }
        }
        Ok(Matrix::from_raw(n, m, out))
    }

    /// `self · rhsᵀ` without materializing the transpose.
    pub fn matmul_transpose(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::DimensionMismatch {
                op: "matmul_transpose",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let (n, m) = (self.rows, rhs.rows);
        let mut out = Vec::with_capacity(n * m);
        for a in self.row_iter() {
            for b in rhs.row_iter() {
                out.push(dot(a, b));
            }
        }
        Ok(Matrix::from_raw(n, m, out))
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for (i, row) in self.row_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                out[j * self.rows + i] = v;
            }
        }
        Matrix::from_raw(self.cols, self.rows, out)
    }

    /// `selfᵀ · self`, exploiting symmetry of the result.
    ///
    /// Each entry sums over rows in ascending order. Output columns are
    /// processed in tiles so the block being updated stays in cache, and four
    /// input rows are folded into each pass over the tile.
    pub fn gram(&self) -> Matrix {
        const TILE: usize = 64;
        let d = self.cols;
        let mut out = vec![0.0; d * d];
        let rest = self.data.chunks_exact(4 * d).remainder();
        for lo in (0..d).step_by(TILE) {
            let hi = (lo + TILE).min(d);
            for quad in self.data.chunks_exact(4 * d) {
                let (r0, tail) = quad.split_at(d);
                let (r1, tail) = tail.split_at(d);
                let (r2, r3) = tail.split_at(d);
                for i in 0..hi {
                    let (a0, a1, a2, a3) = (r0[i], r1[i], r2[i], r3[i]);
                    let from = i.max(lo);
                    let dst = &mut out[i * d + from..i * d + hi];
                    for (j, o) in (from..hi).zip(dst.iter_mut()) {
                        *o = (((*o + a0 * r0[j]) + a1 * r1[j]) + a2 * r2[j]) + a3 * r3[j];
                    }
                }
            }
            for row in rest.chunks_exact(d) {
                for (i, &ri) in row[..hi].iter().enumerate() {
                    let from = i.max(lo);
                    let dst = &mut out[i * d + from..i * d + hi];
                    for (o, &rj) in dst.iter_mut().zip(&row[from..hi]) {
                        *o += ri * rj;
                    }
                }
            }
        }
        mirror_upper(&mut out, d);
        Matrix::from_raw(d, d, out)
    }

    /// `self · selfᵀ`, exploiting symmetry of the result.
    pub fn outer_gram(&self) -> Matrix {
        self.transpose().gram()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    /// Frobenius inner product `tr(selfᵀ · other)`.
    pub fn frobenius_dot(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape("frobenius_dot", other)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| x * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Largest entrywise `|a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> Result<f64> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let n = self.rows;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        Ok(worst)
    }

    /// `(self + selfᵀ) / 2`.
    pub fn symmetrized(&self) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let n = self.rows;
        let mut out = self.clone();
        for i in 0..n {
            for j in i + 1..n {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }

    /// `self · v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                op: "mul_vec",
                lhs: self.shape(),
                rhs: (v.len(), 1),
            });
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    /// `vᵀ · self` for a row vector `v`.
    pub fn vec_mul(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::DimensionMismatch {
                op: "vec_mul",
                lhs: (1, v.len()),
                rhs: self.shape(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (row, &vi) in self.row_iter().zip(v) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += vi * x;
            }
        }
        Ok(out)
    }

    fn zip_with(&self, op: &'static str, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.check_same_shape(op, other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    fn check_same_shape(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for row in self.row_iter() {
            writeln!(f, "  {row:?}")?;
        }
        write!(f, "]")
    }
}

fn mirror_upper(data: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..i {
            data[i * n + j] = data[j * n + i];
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
