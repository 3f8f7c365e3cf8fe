//! Compressed sparse row matrices.
//!
//! Column indices within each row are strictly increasing and explicit zeros
//! are dropped at construction, so the stored pattern is exactly the support.

use crate::dense::DenseMatrix;
use crate::error::{McnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets. Duplicate coordinates are
    /// summed; entries that end up exactly zero are dropped.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values = Vec::with_capacity(t.len());
        let mut iter = t.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            assert!(r < n_rows && c < n_cols, "triplet out of bounds");
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                indptr[r + 1] += 1;
                indices.push(c);
                values.push(v);
            }
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut t = Vec::new();
        for r in 0..m.rows {
            for c in 0..m.cols {
                let v = m.get(r, c);
                if v != 0.0 {
                    t.push((r, c, v));
                }
            }
        }
        CsrMatrix::from_triplets(m.rows, m.cols, t)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    #[inline]
    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.indptr[r]..self.indptr[r + 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.iter() {
            out.set(r, c, v);
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|r| self.row(r).1.iter().sum())
            .collect()
    }

    pub fn row_maxes(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|r| self.row(r).1.iter().copied().fold(0.0, f64::max))
            .collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::min)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        self.iter()
            .all(|(r, c, v)| (self.get(c, r) - v).abs() <= tol)
    }

    pub fn transpose(&self) -> CsrMatrix {
        let t: Vec<(usize, usize, f64)> = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        CsrMatrix::from_triplets(self.n_cols, self.n_rows, t)
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> CsrMatrix {
        let t: Vec<(usize, usize, f64)> = self.iter().map(|(r, c, v)| (r, c, f(v))).collect();
        CsrMatrix::from_triplets(self.n_rows, self.n_cols, t)
    }

    /// Scale every entry of row `r` by `factors[r]`.
    pub fn scale_rows(&self, factors: &[f64]) -> CsrMatrix {
        assert_eq!(factors.len(), self.n_rows);
        let t: Vec<(usize, usize, f64)> = self
            .iter()
            .map(|(r, c, v)| (r, c, v * factors[r]))
            .collect();
        CsrMatrix::from_triplets(self.n_rows, self.n_cols, t)
    }

    /// `self + diag(d)`. Existing diagonal entries are summed with `d`.
    pub fn add_diagonal(&self, d: &[f64]) -> CsrMatrix {
        assert_eq!(self.n_rows, self.n_cols);
        assert_eq!(d.len(), self.n_rows);
        let mut t: Vec<(usize, usize, f64)> = self.iter().collect();
        for (i, &v) in d.iter().enumerate() {
            t.push((i, i, v));
        }
        CsrMatrix::from_triplets(self.n_rows, self.n_cols, t)
    }

    /// Sparse-sparse product with a dense row accumulator. Result entries
    /// with magnitude at or below `drop_tol` are discarded as numerical dust.
    pub fn spgemm(&self, rhs: &CsrMatrix, drop_tol: f64) -> CsrMatrix {
        assert_eq!(self.n_cols, rhs.n_rows, "inner dimensions must agree");
        let mut acc = vec![0.0f64; rhs.n_cols];
        let mut touched: Vec<usize> = Vec::new();
        let mut indptr = Vec::with_capacity(self.n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..self.n_rows {
            touched.clear();
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (rcols, rvals) = rhs.row(k);
                for (&j, &b) in rcols.iter().zip(rvals) {
                    if acc[j] == 0.0 {
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                let v = acc[j];
                acc[j] = 0.0;
                if v.abs() > drop_tol {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: rhs.n_cols,
            indptr,
            indices,
            values,
        }
    }

    /// `self @ rhs` for a dense right-hand side.
    pub fn matmul_dense(&self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n_cols, rhs.rows, "inner dimensions must agree");
        let mut out = DenseMatrix::zeros(self.n_rows, rhs.cols);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let out_row = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for (&k, &a) in cols.iter().zip(vals) {
                let rhs_row = rhs.row(k);
                for (j, &b) in rhs_row.iter().enumerate() {
                    out_row[j] += a * b;
                }
            }
        }
        out
    }

    /// `self^T @ rhs` for a dense right-hand side, without materializing the
    /// transpose.
    pub fn t_matmul_dense(&self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n_rows, rhs.rows, "outer dimensions must agree");
        let mut out = DenseMatrix::zeros(self.n_cols, rhs.cols);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let rhs_row = rhs.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let out_row = &mut out.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (j, &b) in rhs_row.iter().enumerate() {
                    out_row[j] += a * b;
                }
            }
        }
        out
    }

    /// Validate the structural invariants (used by property tests).
    pub fn check_invariants(&self) -> Result<()> {
        if self.indptr.len() != self.n_rows + 1 || self.indptr[self.n_rows] != self.indices.len() {
            return Err(McnError::InvalidData("bad indptr".into()));
        }
        for r in 0..self.n_rows {
            if self.indptr[r] > self.indptr[r + 1] {
                return Err(McnError::InvalidData("indptr not nondecreasing".into()));
            }
            let (cols, _) = self.row(r);
            if !cols.windows(2).all(|w| w[0] < w[1]) {
                return Err(McnError::InvalidData(format!(
                    "row {r} columns not strictly increasing"
                )));
            }
            if cols.iter().any(|&c| c >= self.n_cols) {
                return Err(McnError::InvalidData(format!("row {r} column overflow")));
            }
        }
        Ok(())
    }
}
