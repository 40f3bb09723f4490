//! Dense row-major matrices and nonnegative weight vectors.

use std::ops::Index;

use crate::error::{Result, SolverError};
use crate::scalar::Scalar;

/// Row-major dense matrix with finite entries.
///
/// Zero rows are allowed so that "no constraints" can be expressed directly;
/// the column count is always at least one.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if cols == 0 {
            return Err(SolverError::InvalidInput("matrix must have at least one column".into()));
        }
        if data.len() != rows * cols {
            return Err(SolverError::DimensionMismatch(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::InvalidInput(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; every row must have the same length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(SolverError::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// A matrix with no rows, i.e. an empty constraint set over `cols` variables.
    pub fn empty(cols: usize) -> Self {
        assert!(cols > 0, "matrix must have at least one column");
        Self { rows: 0, cols, data: Vec::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(cols > 0, "matrix must have at least one column");
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "mul_vec dimension");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `A^T y`
    pub fn tmul_vec(&self, y: &[T]) -> Vec<T> {
        assert_eq!(y.len(), self.rows, "tmul_vec dimension");
        let mut out = vec![T::zero(); self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi != T::zero() {
                axpy(yi, self.row(i), &mut out);
            }
        }
        out
    }

    /// Panics on a matrix without rows, whose transpose would have no columns.
    pub fn transpose(&self) -> Self {
        assert!(self.rows > 0, "cannot transpose a matrix without rows");
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Stacks `row` below the matrix.
    pub fn with_row(&self, row: &[T]) -> Result<Self> {
        if row.len() != self.cols {
            return Err(SolverError::DimensionMismatch(format!(
                "appended row has {} entries, expected {}",
                row.len(),
                self.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(row);
        Self::new(self.rows + 1, self.cols, data)
    }

    /// Selects a subset of columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * columns.len());
        for i in 0..self.rows {
            let r = self.row(i);
            data.extend(columns.iter().map(|&j| r[j]));
        }
        Self { rows: self.rows, cols: columns.len().max(1), data }
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

/// Nonnegative, finite weights; the diagonal of `D` in the weighted problems.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T>(Vec<T>);

impl<T: Scalar> WeightVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < T::zero()) {
            return Err(SolverError::InvalidInput(format!(
                "weight {i} is {} (must be finite and nonnegative)",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![T::one(); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    /// Weights with every entry raised to at least `WEIGHT_FLOOR * max(w)`.
    ///
    /// An all-zero vector is returned as all ones, i.e. unweighted.
    pub fn floored(&self) -> Vec<T> {
        let max = self.0.iter().copied().fold(T::zero(), T::max);
        if max <= T::zero() {
            return vec![T::one(); self.0.len()];
        }
        let floor = T::WEIGHT_FLOOR * max;
        self.0.iter().map(|&w| w.max(floor)).collect()
    }
}

impl<T> AsRef<[T]> for WeightVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

/// Eight independent accumulators so the loop vectorizes.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn norm2<T: Scalar>(x: &[T]) -> T {
    crate::numerics::lp_norm(x, T::c(2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_entries() {
        let err = DenseMatrix::new(1, 2, vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, SolverError::InvalidInput(_)));
    }

    #[test]
    fn rejects_ragged_rows() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(DenseMatrix::from_rows(&rows).is_err());
    }

    #[test]
    fn products_and_transpose() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(a.mul_vec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(a.tmul_vec(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
        let t = a.transpose();
        assert_eq!((t.rows(), t.cols()), (3, 2));
        assert_eq!(t[(2, 1)], 6.0);
        assert_eq!(a.select_columns(&[2, 0]).row(1), &[6.0, 4.0]);
    }

    #[test]
    fn weights_validate_and_floor() {
        assert!(WeightVector::new(vec![1.0, -1.0]).is_err());
        let w = WeightVector::new(vec![0.0, 2.0]).unwrap();
        assert_eq!(w.floored(), vec![2e-12, 2.0]);
        assert_eq!(WeightVector::new(vec![0.0f64; 3]).unwrap().floored(), vec![1.0; 3]);
    }
}
