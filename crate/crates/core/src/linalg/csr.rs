//! Compressed sparse row matrices over `f64`.
//!
//! Assembly produces coordinate triplets with duplicates; [`CsrMatrix::from_triplets`]
//! sums them into canonical CSR form (rows sorted, no duplicate columns).
//! Matrices stay real everywhere; complex arithmetic only appears in the time
//! stepper, which consumes real operators through the `*_complex` paths.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Sparse matrix in compressed sparse row format.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a CSR matrix from coordinate triplets, summing duplicates.
    ///
    /// # Panics
    /// Panics if a triplet lies outside `nrows x ncols`.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of bounds");
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(i, j, v) in triplets {
            let k = next[i];
            cols[k] = j;
            vals[k] = v;
            next[i] += 1;
        }
        // Sort each row by column and merge duplicates in place.
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            row.clear();
            for k in counts[i]..counts[i + 1] {
                row.push((cols[k], vals[k]));
            }
            row.sort_unstable_by_key(|&(j, _)| j);
            let mut iter = row.iter().copied();
            if let Some((mut cur_j, mut cur_v)) = iter.next() {
                for (j, v) in iter {
                    if j == cur_j {
                        cur_v += v;
                    } else {
                        indices.push(cur_j);
                        values.push(cur_v);
                        cur_j = j;
                        cur_v = v;
                    }
                }
                indices.push(cur_j);
                values.push(cur_v);
            }
            indptr[i + 1] = indices.len();
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Identity matrix, handy for fine-grid "projections".
    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    /// Iterates over `(row, col, value)` of all stored entries.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    /// `y = A x` over real vectors.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
    }

    /// `y = A x` with a complex vector and the real operator.
    pub fn matvec_complex(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = Complex64::new(0.0, 0.0);
            for (&j, &v) in cols.iter().zip(vals) {
                acc += x[j] * v;
            }
            y[i] = acc;
        }
    }

    /// Real bilinear form `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        let mut acc = 0.0;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut row_acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                row_acc += v * y[j];
            }
            acc += x[i] * row_acc;
        }
        acc
    }

    /// Sesquilinear form `x^H A y` for the real operator `A`.
    pub fn sesquilinear(&self, x: &[Complex64], y: &[Complex64]) -> Complex64 {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut row_acc = Complex64::new(0.0, 0.0);
            for (&j, &v) in cols.iter().zip(vals) {
                row_acc += y[j] * v;
            }
            acc += x[i].conj() * row_acc;
        }
        acc
    }

    /// Hermitian quadratic form `x^H A x`, returned as its real part.
    ///
    /// For symmetric `A` the imaginary part cancels exactly in theory; it is
    /// discarded here rather than asserted against roundoff.
    pub fn hermitian_form(&self, x: &[Complex64]) -> f64 {
        self.sesquilinear(x, x).re
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut indptr = counts.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let k = indptr[j];
                indices[k] = i;
                values[k] = v;
                indptr[j] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: counts,
            indices,
            values,
        }
    }

    /// Sparse-sparse product `A * B` with a dense accumulator per row.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows, "matmul dimension mismatch");
        let mut acc = vec![0.0; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.nrows {
            touched.clear();
            let (cols, vals) = self.row(i);
            for (&k, &v) in cols.iter().zip(vals) {
                let (bcols, bvals) = other.row(k);
                for (&j, &bv) in bcols.iter().zip(bvals) {
                    if acc[j] == 0.0 && !touched.contains(&j) {
                        touched.push(j);
                    }
                    acc[j] += v * bv;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                indices.push(j);
                values.push(acc[j]);
                acc[j] = 0.0;
            }
            indptr[i + 1] = indices.len();
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: other.ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Symmetric restriction `A[idx, idx]`.
    ///
    /// `idx` must be duplicate-free; entries of `A` outside `idx x idx` are
    /// dropped, matching a homogeneous Dirichlet condition on the complement.
    pub fn restrict(&self, idx: &[usize]) -> CsrMatrix {
        assert_eq!(self.nrows, self.ncols, "restrict expects a square matrix");
        let mut pos = vec![usize::MAX; self.ncols];
        for (p, &d) in idx.iter().enumerate() {
            assert!(pos[d] == usize::MAX, "duplicate index {d} in restriction");
            pos[d] = p;
        }
        let mut indptr = vec![0usize; idx.len() + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut row_buf: Vec<(usize, f64)> = Vec::new();
        for (p, &d) in idx.iter().enumerate() {
            row_buf.clear();
            let (cols, vals) = self.row(d);
            for (&j, &v) in cols.iter().zip(vals) {
                if pos[j] != usize::MAX {
                    row_buf.push((pos[j], v));
                }
            }
            row_buf.sort_unstable_by_key(|&(j, _)| j);
            for &(j, v) in &row_buf {
                indices.push(j);
                values.push(v);
            }
            indptr[p + 1] = indices.len();
        }
        CsrMatrix {
            nrows: idx.len(),
            ncols: idx.len(),
            indptr,
            indices,
            values,
        }
    }

    /// Dense copy; only sensible for small matrices and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            m[(i, j)] += v;
        }
        m
    }

    /// Builds CSR from a dense matrix keeping exact nonzeros.
    pub fn from_dense(m: &DMatrix<f64>) -> CsrMatrix {
        let mut triplets = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        CsrMatrix::from_triplets(m.nrows(), m.ncols(), &triplets)
    }

    /// Maximum asymmetry `|a_ij - a_ji|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = t.row(i);
            // Rows are sorted; walk both in lockstep.
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                match (ca.get(p), cb.get(q)) {
                    (Some(&ja), Some(&jb)) if ja == jb => {
                        worst = worst.max((va[p] - vb[q]).abs());
                        p += 1;
                        q += 1;
                    }
                    (Some(&ja), Some(&jb)) if ja < jb => {
                        worst = worst.max(va[p].abs());
                        p += 1;
                    }
                    (Some(_), Some(_)) => {
                        worst = worst.max(vb[q].abs());
                        q += 1;
                    }
                    (Some(_), None) => {
                        worst = worst.max(va[p].abs());
                        p += 1;
                    }
                    (None, Some(_)) => {
                        worst = worst.max(vb[q].abs());
                        q += 1;
                    }
                    (None, None) => unreachable!(),
                }
            }
        }
        worst
    }
}

/// `sum_k coeff_k * A_k` over matrices of identical shape (patterns may differ).
pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> CsrMatrix {
    assert!(!terms.is_empty(), "empty linear combination");
    let (nrows, ncols) = (terms[0].1.nrows(), terms[0].1.ncols());
    let mut acc = vec![0.0; ncols];
    let mut touched: Vec<usize> = Vec::new();
    let mut indptr = vec![0usize; nrows + 1];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for i in 0..nrows {
        touched.clear();
        for &(c, m) in terms {
            assert_eq!(m.nrows(), nrows);
            assert_eq!(m.ncols(), ncols);
            let (cols, vals) = m.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if acc[j] == 0.0 && !touched.contains(&j) {
                    touched.push(j);
                }
                acc[j] += c * v;
            }
        }
        touched.sort_unstable();
        for &j in &touched {
            indices.push(j);
            values.push(acc[j]);
            acc[j] = 0.0;
        }
        indptr[i + 1] = indices.len();
    }
    CsrMatrix {
        nrows,
        ncols,
        indptr,
        indices,
        values,
    }
}
