//! Dense row-major real matrix.
//!
//! Rows are samples and columns are features throughout the crate. Heavy
//! products go through `faer` using zero-copy strided views of the row-major
//! buffer, so no layout conversion happens on the hot path.

use std::fmt;

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{}", self.rows, self.cols)?;
        if self.rows * self.cols <= 64 {
            for r in 0..self.rows {
                write!(f, "\n  {:?}", self.row(r))?;
            }
        }
        Ok(())
    }
}

impl Matrix {
    /// Builds a matrix from row-major values, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: idx / cols.max(1),
                col: idx % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
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

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", format!("{cols} columns"), format!("{} in row {i}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// A single column vector.
    pub fn column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn col_values(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn view(&self) -> MatRef<'_, f64> {
        MatRef::from_row_major_slice(&self.data, self.rows, self.cols)
    }

    pub(crate) fn view_mut(&mut self) -> MatMut<'_, f64> {
        MatMut::from_row_major_slice_mut(&mut self.data, self.rows, self.cols)
    }

    pub(crate) fn from_faer(m: MatRef<'_, f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self * rhs`
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::shape("matmul", format!("{} rows on the right", self.cols), rhs.rows));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        gemm(out.view_mut(), self.view(), rhs.view());
        Ok(out)
    }

    /// `selfᵀ * rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::shape("t_matmul", format!("{} rows on the right", self.rows), rhs.rows));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        gemm(out.view_mut(), self.view().transpose(), rhs.view());
        Ok(out)
    }

    /// `self * rhsᵀ` without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::shape("matmul_t", format!("{} columns on the right", self.cols), rhs.cols));
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        gemm(out.view_mut(), self.view(), rhs.view().transpose());
        Ok(out)
    }

    /// Gram matrix `selfᵀ self`, symmetrized exactly.
    pub fn gram(&self) -> Matrix {
        let mut g = self.t_matmul(self).expect("shapes agree");
        g.symmetrize_from_lower();
        g
    }

    /// Outer Gram matrix `self selfᵀ`, symmetrized exactly.
    pub fn outer_gram(&self) -> Matrix {
        let mut g = self.matmul_t(self).expect("shapes agree");
        g.symmetrize_from_lower();
        g
    }

    pub(crate) fn symmetrize_from_lower(&mut self) {
        debug_assert_eq!(self.rows, self.cols);
        let n = self.rows;
        for r in 0..n {
            for c in (r + 1)..n {
                self.data[r * n + c] = self.data[c * n + r];
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape("matvec", self.cols, x.len()));
        }
        Ok(self.row_iter().map(|r| dot(r, x)).collect())
    }

    /// `selfᵀ x`
    pub fn t_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::shape("t_matvec", self.rows, x.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in self.row_iter().zip(x) {
            if xr != 0.0 {
                for (o, &v) in out.iter_mut().zip(r) {
                    *o += v * xr;
                }
            }
        }
        Ok(out)
    }

    /// Horizontal concatenation `[a, b, ...]`.
    pub fn hstack(blocks: &[&Matrix]) -> Result<Matrix> {
        let rows = blocks.first().map_or(0, |b| b.rows);
        if let Some(b) = blocks.iter().find(|b| b.rows != rows) {
            return Err(Error::shape("hstack", rows, b.rows));
        }
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for b in blocks {
                data.extend_from_slice(b.row(r));
            }
        }
        Ok(Matrix::from_vec_unchecked(rows, cols, data))
    }

    /// Vertical concatenation.
    pub fn vstack(blocks: &[&Matrix]) -> Result<Matrix> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        let mut data = Vec::with_capacity(blocks.iter().map(|b| b.data.len()).sum());
        let mut rows = 0;
        for b in blocks {
            if b.cols != cols {
                return Err(Error::shape("vstack", format!("{cols} columns"), b.cols));
            }
            data.extend_from_slice(&b.data);
            rows += b.rows;
        }
        Ok(Matrix::from_vec_unchecked(rows, cols, data))
    }

    /// First `n` columns.
    pub fn leading_cols(&self, n: usize) -> Matrix {
        assert!(n <= self.cols);
        if n == self.cols {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.rows * n);
        for r in self.row_iter() {
            data.extend_from_slice(&r[..n]);
        }
        Matrix::from_vec_unchecked(self.rows, n, data)
    }

    /// Columns `start..end`.
    pub fn col_range(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols);
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for r in self.row_iter() {
            data.extend_from_slice(&r[start..end]);
        }
        Matrix::from_vec_unchecked(self.rows, end - start, data)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_vec_unchecked(idx.len(), self.cols, data)
    }

    /// Row range `start..end`.
    pub fn row_range(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.rows);
        Matrix::from_vec_unchecked(end - start, self.cols, self.data[start * self.cols..end * self.cols].to_vec())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_vec_unchecked(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape("sub", format!("{:?}", self.shape()), format!("{:?}", other.shape())));
        }
        Ok(Matrix::from_vec_unchecked(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn add_diagonal(&mut self, v: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += v;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|a_ij - a_ji|`; square matrices only.
    pub fn asymmetry(&self) -> f64 {
        let n = self.rows;
        let mut worst: f64 = 0.0;
        for r in 0..n {
            for c in (r + 1)..n {
                worst = worst.max((self.data[r * n + c] - self.data[c * n + r]).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
/// `dst = lhs * rhs` through faer.
pub(crate) fn gemm(dst: MatMut<'_, f64>, lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>) {
    matmul(dst, Accum::Replace, lhs, rhs, 1.0, Par::Seq);
    clear_upper_state();
}

/// faer's SIMD kernels return with the upper halves of the vector registers
/// dirty. Until they are cleared every SSE-encoded libm call (`exp`, `erfc`)
/// pays a state-transition penalty of roughly 30x.
#[inline]
pub(crate) fn clear_upper_state() {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx") {
            // SAFETY: vzeroupper only zeroes the upper register halves and is available with AVX.
            unsafe { std::arch::x86_64::_mm256_zeroupper() }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_bad_length() {
        assert!(matches!(Matrix::new(1, 2, vec![1.0, f64::NAN]), Err(Error::NonFinite { row: 0, col: 1 })));
        assert!(matches!(Matrix::new(2, 2, vec![1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn products_match_naive_loops() {
        let a = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.5 - 2.0);
        let b = Matrix::from_fn(4, 2, |r, c| (r as f64 - c as f64).sin());
        let ab = a.matmul(&b).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                let naive: f64 = (0..4).map(|k| a.get(r, k) * b.get(k, c)).sum();
                assert!((ab.get(r, c) - naive).abs() < 1e-12);
            }
        }
        let atb = a.t_matmul(&a).unwrap();
        assert_eq!(atb.shape(), (4, 4));
        let expect = a.transpose().matmul(&a).unwrap();
        assert!(atb.sub(&expect).unwrap().max_abs() < 1e-12);
        let abt = a.matmul_t(&a).unwrap();
        assert!(abt.sub(&a.matmul(&a.transpose()).unwrap()).unwrap().max_abs() < 1e-12);
        assert_eq!(a.gram().asymmetry(), 0.0);
    }

    #[test]
    fn hstack_and_slicing() {
        let a = Matrix::from_fn(2, 2, |r, c| (r * 2 + c) as f64);
        let b = Matrix::from_fn(2, 1, |r, _| 10.0 + r as f64);
        let h = Matrix::hstack(&[&a, &b]).unwrap();
        assert_eq!(h.row(1), &[2.0, 3.0, 11.0]);
        assert_eq!(h.leading_cols(2), a);
        assert_eq!(h.col_range(2, 3), b);
        assert_eq!(h.select_rows(&[1]).row(0), h.row(1));
        assert!(Matrix::hstack(&[&a, &Matrix::zeros(3, 1)]).is_err());
    }
}
