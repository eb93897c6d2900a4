use std::fmt;

use crate::error::{Error, Result};

/// Default tolerance below which a row is considered to have no direction.
pub const TAU_NORM: f64 = 1e-12;

/// Dense row-major matrix of `f64`.
///
/// Matrices built through the public constructors are guaranteed to hold only
/// finite entries. Once built they are never mutated in place by the library.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::BadLength {
                rows,
                cols,
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "ragged rows: expected {cols} columns, got {}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Unchecked constructor for results of internal arithmetic.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_raw(rows, cols, vec![value; rows * cols])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_raw(1, 1, vec![value])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_raw(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// The value of a 1x1 matrix.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on a non-scalar matrix");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy with entry `(i, j)` replaced.
    pub fn with_entry(&self, i: usize, j: usize, value: f64) -> Self {
        let mut data = self.data.clone();
        data[i * self.cols + j] = value;
        Self::from_raw(self.rows, self.cols, data)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(
            self.cols,
            other.rows,
            "matmul shape mismatch: {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let (n, m, p) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let out_row = &mut out[i * p..(i + 1) * p];
            for k in 0..m {
                let a = self.data[i * m + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * p..(k + 1) * p];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Self::from_raw(n, p, out)
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(
            self.shape(),
            other.shape(),
            "elementwise shape mismatch: {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_raw(self.rows, self.cols, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|&a| f(a)).collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|a| a * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.row_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    /// Keeps the listed columns, in order.
    pub fn select_columns(&self, columns: &[usize]) -> Self {
        Self::from_fn(self.rows, columns.len(), |i, j| self.get(i, columns[j]))
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "vstack column mismatch");
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::from_raw(self.rows + other.rows, self.cols, data)
    }
}

/// Scales every row to unit Euclidean norm.
///
/// Fails with [`Error::DegenerateRow`] if any row norm is below `tol`.
pub fn rowwise_normalize_with(m: &Matrix, tol: f64) -> Result<Matrix> {
    let mut data = Vec::with_capacity(m.len());
    for (i, (row, norm)) in m.row_iter().zip(m.row_norms()).enumerate() {
        if !(norm >= tol) {
            return Err(Error::DegenerateRow { row: i, norm });
        }
        data.extend(row.iter().map(|v| v / norm));
    }
    Ok(Matrix::from_raw(m.rows, m.cols, data))
}

pub fn rowwise_normalize(m: &Matrix) -> Result<Matrix> {
    rowwise_normalize_with(m, TAU_NORM)
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in self.row_iter() {
            writeln!(f, "  {r:?}")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_bad_length() {
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0]),
            Err(Error::BadLength {
                expected: 4,
                actual: 1,
                ..
            })
        ));
    }

    #[test]
    fn normalize_examples() {
        let m = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let n = rowwise_normalize(&m).unwrap();
        assert_eq!(n.data(), &[0.6, 0.8]);

        let m = Matrix::from_rows(&[[1.0, 1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(rowwise_normalize(&m).unwrap().data(), &[0.5; 4]);

        let m = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(
            rowwise_normalize(&m),
            Err(Error::DegenerateRow { row: 1, .. })
        ));
    }

    #[test]
    fn matmul_matches_hand_computation() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(a.matmul(&b).data(), &[2.0, 1.0, 4.0, 3.0]);
        assert_eq!(a.transpose().data(), &[1.0, 3.0, 2.0, 4.0]);
    }
}
