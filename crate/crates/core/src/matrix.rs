//! Dense row-major matrices and a compressed sparse row matrix used for
//! neighbourhood aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{GlaError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GlaError::Shape {
                op: "Matrix::new",
                left: (rows, cols),
                right: (data.len(), 1),
            });
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

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally sized rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(GlaError::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        matmul_into(self, other, &mut out);
        Ok(out)
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Index of the largest entry in row `r`; ties go to the lowest index.
    pub fn argmax_row(&self, r: usize) -> usize {
        argmax(self.row(r))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Index of the largest value; the first index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

// i-k-j ordering keeps the inner loop contiguous in both `b` and `out`.
fn matmul_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let n = b.cols;
    for i in 0..a.rows {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * n..(k + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// Square sparse matrix in compressed sparse row form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Triplets are sorted by
    /// `(row, col)`; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if r >= n || c >= n {
                return Err(GlaError::Shape {
                    op: "SparseMatrix::from_triplets",
                    left: (r, c),
                    right: (n, n),
                });
            }
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates `(col, value)` for row `r`.
    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// All stored entries in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|r| self.row_entries(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for (r, c, v) in self.triplets() {
            m.set(r, c, v);
        }
        m
    }

    /// `self · x`.
    pub fn mul_dense(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.n {
            return Err(GlaError::Shape {
                op: "spmm",
                left: (self.n, self.n),
                right: x.shape(),
            });
        }
        let mut out = Matrix::zeros(self.n, x.cols());
        for r in 0..self.n {
            for (c, w) in self.row_entries(r) {
                let src = x.row(c).to_vec();
                for (o, s) in out.row_mut(r).iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · x`.
    pub fn transpose_mul_dense(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.n, x.cols());
        for r in 0..self.n {
            for (c, w) in self.row_entries(r) {
                for j in 0..x.cols() {
                    let v = out.get(c, j) + w * x.get(r, j);
                    out.set(c, j, v);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_matmul() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Matrix::from_rows(&[[1.0], [1.0]]);
        assert_eq!(a.matmul(&b).unwrap(), Matrix::from_rows(&[[3.0], [7.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("(2, 3)"), "{err}");
    }

    #[test]
    fn sparse_matches_dense() {
        let s = SparseMatrix::from_triplets(3, &[(0, 1, 2.0), (2, 0, -1.0), (1, 1, 0.5), (0, 1, 1.0)])
            .unwrap();
        assert_eq!(s.nnz(), 3);
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let dense = s.to_dense();
        assert_eq!(s.mul_dense(&x).unwrap(), dense.matmul(&x).unwrap());
        assert_eq!(
            s.transpose_mul_dense(&x),
            dense.transpose().matmul(&x).unwrap()
        );
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.3, 0.7]), 1);
    }
}
