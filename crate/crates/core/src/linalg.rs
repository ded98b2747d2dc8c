//! Dense row-major matrices and CSR sparse matrices sized for mesh
//! operators: graph Laplacians, pooling maps and feature blocks.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row data length mismatch");
        DenseMatrix { rows, cols, data }
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

    /// `self * other`, dense times dense.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "inner dimension mismatch");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let out_row = out.row_mut(i);
                for (j, &o) in orow.iter().enumerate() {
                    out_row[j] += a * o;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

/// Sparse matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from `(row, col, value)` triplets. Duplicate coordinates are
    /// summed; exact zeros after summing are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet out of bounds");
            *acc.entry((r, c)).or_insert(0.0) += v;
        }
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(acc.len());
        let mut values = Vec::with_capacity(acc.len());
        for (&(r, c), &v) in acc.iter() {
            if v == 0.0 {
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseMatrix { rows, cols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)))
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterate stored entries as `(row, col, value)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let lo = self.row_ptr[r];
            let hi = self.row_ptr[r + 1];
            (lo..hi).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (lo..hi).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        match self.col_idx[lo..hi].binary_search(&c) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Sparse times dense: `self * x`.
    pub fn matmul_dense(&self, x: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, x.rows, "inner dimension mismatch");
        let mut out = DenseMatrix::zeros(self.rows, x.cols);
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let v = self.values[k];
                let xrow = x.row(c);
                let orow = out.row_mut(r);
                for (j, &xv) in xrow.iter().enumerate() {
                    orow[j] += v * xv;
                }
            }
        }
        out
    }

    /// Sparse times dense vector.
    pub fn matmul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            out[r] = s;
        }
        out
    }

    /// Transposed sparse times dense: `self^T * x`.
    pub fn transpose_matmul_dense(&self, x: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.rows, x.rows, "inner dimension mismatch");
        let mut out = DenseMatrix::zeros(self.cols, x.cols);
        for r in 0..self.rows {
            let xrow_start = r * x.cols;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let v = self.values[k];
                let orow = out.row_mut(c);
                for j in 0..orow.len() {
                    orow[j] += v * x.data[xrow_start + j];
                }
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> SparseMatrix {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            *v *= s;
        }
        out
    }

    /// `self + c * I` for a square matrix.
    pub fn add_scaled_identity(&self, c: f64) -> SparseMatrix {
        assert_eq!(self.rows, self.cols, "matrix must be square");
        let triplets: Vec<(usize, usize, f64)> = self
            .entries()
            .chain((0..self.rows).map(|i| (i, i, c)))
            .collect();
        SparseMatrix::from_triplets(self.rows, self.cols, triplets)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        self.entries().all(|(r, c, v)| (self.get(c, r) - v).abs() <= tol)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.entries() {
            out.set(r, c, v);
        }
        out
    }

    /// Largest eigenvalue estimate by power iteration; intended for
    /// symmetric positive semidefinite operators.
    pub fn largest_eigenvalue(&self, iterations: usize) -> f64 {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        if n == 0 {
            return 0.0;
        }
        // Deterministic pseudo-random start vector with components
        // spread enough to avoid landing in an invariant subspace.
        let mut x: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.5 * f64::sin(1.0 + i as f64 * 2.399963))
            .collect();
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let y = self.matmul_vec(&x);
            let norm = f64::sqrt(y.iter().map(|v| v * v).sum::<f64>());
            if norm < 1e-300 {
                return 0.0;
            }
            lambda = x
                .iter()
                .zip(y.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / x.iter().map(|v| v * v).sum::<f64>();
            x = y.into_iter().map(|v| v / norm).collect();
        }
        lambda
    }
}
