//! Direct solvers for banded systems.
//!
//! [`BandedLu`] is an LU factorization with partial pivoting in LAPACK-style
//! band storage, generic over real and complex scalars.  Row pivoting can
//! push fill up to `kl` extra superdiagonals, so the working array holds
//! `2*kl + ku + 1` diagonals.  [`BandedCholesky`] is the unpivoted symmetric
//! positive definite variant, which doubles as the definiteness check for
//! energy operators.

use super::Scalar;
use crate::{Error, Result};

/// Mutable band storage being filled before factorization.
///
/// Entry `(i, j)` is stored when `-(ku) <= i - j <= kl`; writes outside that
/// band panic, which catches wrong bandwidth estimates early.
#[derive(Debug, Clone)]
pub struct BandedStorage<T> {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<T>,
}

impl<T: Scalar> BandedStorage<T> {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandedStorage {
            n,
            kl,
            ku,
            ldab,
            ab: vec![T::ZERO; ldab * n],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(i + self.ku + self.kl >= j && j + self.kl >= i, "outside band");
        j * self.ldab + (self.kl + self.ku + i - j)
    }

    /// Adds `v` to entry `(i, j)`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(
            i + self.ku >= j && j + self.kl >= i,
            "entry ({i},{j}) outside declared band (kl={}, ku={})",
            self.kl,
            self.ku
        );
        let k = self.idx(i, j);
        self.ab[k] = self.ab[k] + v;
    }

    pub fn reset(&mut self) {
        self.ab.fill(T::ZERO);
    }

    /// Factors in place; the storage is consumed by the factorization.
    pub fn factor(self) -> Result<BandedLu<T>> {
        BandedLu::factor(self)
    }
}

/// LU factorization of a banded matrix with partial pivoting.
#[derive(Debug, Clone)]
pub struct BandedLu<T> {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<T>,
    ipiv: Vec<usize>,
}

impl<T: Scalar> BandedLu<T> {
    fn factor(mut s: BandedStorage<T>) -> Result<Self> {
        let (n, kl, ku) = (s.n, s.kl, s.ku);
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            let i_end = (j + kl).min(n - 1);
            // Partial pivoting over the lower band of column j.
            let mut p = j;
            let mut best = s.ab[s.idx(j, j)].modulus();
            for i in (j + 1)..=i_end {
                let m = s.ab[s.idx(i, j)].modulus();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::SolverBreakdown {
                    step: j,
                    detail: format!("banded LU: exact zero pivot in column {j} of {n}"),
                });
            }
            ipiv[j] = p;
            let k_end = (j + ku + kl).min(n - 1);
            if p != j {
                for k in j..=k_end {
                    let a = s.idx(j, k);
                    let b = s.idx(p, k);
                    s.ab.swap(a, b);
                }
            }
            let piv = s.ab[s.idx(j, j)];
            for i in (j + 1)..=i_end {
                let l = s.ab[s.idx(i, j)] / piv;
                let li = s.idx(i, j);
                s.ab[li] = l;
                for k in (j + 1)..=k_end {
                    let jk = s.idx(j, k);
                    let ik = s.idx(i, k);
                    s.ab[ik] = s.ab[ik] - l * s.ab[jk];
                }
            }
        }
        Ok(BandedLu {
            n,
            kl,
            ku,
            ldab: s.ldab,
            ab: s.ab,
            ipiv,
        })
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> T {
        self.ab[j * self.ldab + (self.kl + self.ku + i - j)]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [T]) {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        // Forward: apply row swaps and the unit lower factor.
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let i_end = (j + self.kl).min(n - 1);
            let bj = b[j];
            for i in (j + 1)..=i_end {
                b[i] = b[i] - self.at(i, j) * bj;
            }
        }
        // Backward substitution with U, bandwidth ku + kl after pivoting.
        let ubw = self.ku + self.kl;
        for i in (0..n).rev() {
            let mut acc = b[i];
            let k_end = (i + ubw).min(n - 1);
            for k in (i + 1)..=k_end {
                acc = acc - self.at(i, k) * b[k];
            }
            b[i] = acc / self.at(i, i);
        }
    }
}

/// Cholesky factorization `A = L L^T` of a banded symmetric positive
/// definite matrix, storing the lower band.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Builder for the lower band: writes require `0 <= i - j <= bw`.
    pub fn builder(n: usize, bw: usize) -> BandedCholeskyBuilder {
        BandedCholeskyBuilder {
            n,
            bw,
            a: vec![0.0; (bw + 1) * n],
        }
    }

    #[inline]
    fn idx(bw: usize, i: usize, j: usize) -> usize {
        j * (bw + 1) + (i - j)
    }

    fn factor(n: usize, bw: usize, mut a: Vec<f64>) -> Result<Self> {
        for j in 0..n {
            let k_lo = j.saturating_sub(bw);
            let mut d = a[Self::idx(bw, j, j)];
            for k in k_lo..j {
                let l = a[Self::idx(bw, j, k)];
                d -= l * l;
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::Indefinite(format!(
                    "banded Cholesky pivot {d:.3e} at row {j} of {n}"
                )));
            }
            let dj = d.sqrt();
            a[Self::idx(bw, j, j)] = dj;
            let i_end = (j + bw).min(n - 1);
            for i in (j + 1)..=i_end {
                let mut s = a[Self::idx(bw, i, j)];
                for k in i.saturating_sub(bw)..j {
                    s -= a[Self::idx(bw, i, k)] * a[Self::idx(bw, j, k)];
                }
                a[Self::idx(bw, i, j)] = s / dj;
            }
        }
        Ok(BandedCholesky { n, bw, l: a })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut acc = b[i];
            for k in i.saturating_sub(bw)..i {
                acc -= self.l[Self::idx(bw, i, k)] * b[k];
            }
            b[i] = acc / self.l[Self::idx(bw, i, i)];
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            let k_end = (i + bw).min(n - 1);
            for k in (i + 1)..=k_end {
                acc -= self.l[Self::idx(bw, k, i)] * b[k];
            }
            b[i] = acc / self.l[Self::idx(bw, i, i)];
        }
    }
}

/// Accumulator for the lower band of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct BandedCholeskyBuilder {
    n: usize,
    bw: usize,
    a: Vec<f64>,
}

impl BandedCholeskyBuilder {
    /// Adds `v` at `(i, j)` with `i >= j`; symmetric counterparts are implied.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(i >= j && i - j <= self.bw, "entry ({i},{j}) outside lower band");
        self.a[BandedCholesky::idx(self.bw, i, j)] += v;
    }

    pub fn factor(self) -> Result<BandedCholesky> {
        BandedCholesky::factor(self.n, self.bw, self.a)
    }
}
