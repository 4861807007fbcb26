//! Minimal dense linear algebra: a row-major matrix and a direct solver.
//!
//! Just enough for the networks (mat-vec, outer products) and the normal
//! equations of the linear baselines. Not a general-purpose library.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular system: pivot magnitude {pivot:e} too small")]
    Singular { pivot: f64 },
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    /// Builds a matrix from row vectors; every row must have equal length.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self, LinalgError> {
        if rows.is_empty() {
            return Err(LinalgError::Dimension("matrix needs at least one row".into()));
        }
        let cols = rows[0].len();
        if cols == 0 {
            return Err(LinalgError::Dimension("matrix needs at least one column".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(LinalgError::Dimension(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// `out = self · x`
    pub fn mul_vec(&self, x: &[S], out: &mut [S]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.row(r);
            let mut acc = S::zero();
            for (w, xi) in row.iter().zip(x) {
                acc = acc + *w * *xi;
            }
            *o = acc;
        }
    }

    /// `out = selfᵀ · y`
    pub fn mul_vec_transposed(&self, y: &[S], out: &mut [S]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for o in out.iter_mut() {
            *o = S::zero();
        }
        for (r, yi) in y.iter().enumerate() {
            let row = self.row(r);
            for (o, w) in out.iter_mut().zip(row) {
                *o += *yi * *w;
            }
        }
    }

    /// `self += u · vᵀ`
    pub fn add_outer(&mut self, u: &[S], v: &[S]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, ui) in u.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, vi) in row.iter_mut().zip(v) {
                *w += *ui * *vi;
            }
        }
    }

    /// `self += alpha · other`
    pub fn scaled_add(&mut self, alpha: S, other: &Matrix<S>) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * *b;
        }
    }
}

/// Solves `a · x = b` by Gaussian elimination with partial pivoting.
///
/// Consumes its arguments; intended for the small symmetric systems of the
/// normal equations.
pub fn solve<S: Scalar>(mut a: Matrix<S>, mut b: Vec<S>) -> Result<Vec<S>, LinalgError> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(LinalgError::Dimension(format!(
            "solve needs square system, got {}x{} with rhs {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_mag = a.get(col, col).abs();
        for r in col + 1..n {
            let mag = a.get(r, col).abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = r;
            }
        }
        if !(pivot_mag > S::zero()) || !pivot_mag.is_finite() {
            return Err(LinalgError::Singular {
                pivot: pivot_mag.as_f64(),
            });
        }
        if pivot_row != col {
            for c in 0..n {
                let tmp = a.get(col, c);
                a.set(col, c, a.get(pivot_row, c));
                a.set(pivot_row, c, tmp);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a.get(col, col);
        for r in col + 1..n {
            let factor = a.get(r, col) / pivot;
            if factor == S::zero() {
                continue;
            }
            for c in col..n {
                let v = a.get(r, c) - factor * a.get(col, c);
                a.set(r, c, v);
            }
            b[r] = b[r] - factor * b[col];
        }
    }
    let mut x = vec![S::zero(); n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for c in col + 1..n {
            acc = acc - a.get(col, c) * x[c];
        }
        x[col] = acc / a.get(col, col);
    }
    Ok(x)
}
