//! Symmetric banded storage and Cholesky factorization.
//!
//! Trajectory Hessians built from features over at most three consecutive
//! configurations have block bandwidth 3, i.e. at most `3d - 1` scalar
//! sub-diagonals. Factorization and solves cost `O(n * kd^2)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Symmetric matrix stored as its lower band, column by column.
///
/// Entry `(i, j)` with `i >= j` and `i - j <= kd` lives at
/// `data[j * (kd + 1) + (i - j)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBanded<T> {
    n: usize,
    kd: usize,
    data: Vec<T>,
}

impl<T: Real> SymBanded<T> {
    pub fn zeros(n: usize, kd: usize) -> Self {
        Self {
            n,
            kd,
            data: vec![T::zero(); n * (kd + 1)],
        }
    }

    pub fn identity(n: usize, kd: usize) -> Self {
        let mut m = Self::zeros(n, kd);
        m.add_diagonal(T::one());
        m
    }

    /// Extracts the band of a dense symmetric matrix. Entries outside the band
    /// are dropped.
    pub fn from_dense(dense: &DMatrix<T>, kd: usize) -> Self {
        assert!(dense.is_square(), "banded storage needs a square matrix");
        let n = dense.nrows();
        let mut m = Self::zeros(n, kd);
        for j in 0..n {
            for i in j..(j + kd + 1).min(n) {
                m.data[j * (kd + 1) + (i - j)] = dense[(i, j)];
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of sub-diagonals.
    pub fn bandwidth(&self) -> usize {
        self.kd
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        (i - j <= self.kd).then(|| j * (self.kd + 1) + (i - j))
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.slot(i, j).map_or(T::zero(), |s| self.data[s])
    }

    /// Adds `value` to entries `(i, j)` and `(j, i)`.
    ///
    /// Panics if the entry lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, value: T) {
        let s = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside bandwidth {}", self.kd));
        self.data[s] += value;
    }

    pub fn add_diagonal(&mut self, value: T) {
        for j in 0..self.n {
            self.data[j * (self.kd + 1)] += value;
        }
    }

    /// Adds a symmetric dense block whose top-left corner sits at
    /// `(offset, offset)`. Only the lower triangle of `block` is read.
    pub fn add_block(&mut self, offset: usize, block: &DMatrix<T>) {
        debug_assert!(block.is_square());
        let k = block.nrows();
        assert!(offset + k <= self.n, "block exceeds matrix dimension");
        for j in 0..k {
            for i in j..k {
                let v = block[(i, j)];
                if v != T::zero() {
                    self.add(offset + i, offset + j, v);
                }
            }
        }
    }

    pub fn mul_vec(&self, x: &DVector<T>) -> DVector<T> {
        assert_eq!(x.len(), self.n);
        let mut y = DVector::zeros(self.n);
        for j in 0..self.n {
            let base = j * (self.kd + 1);
            y[j] += self.data[base] * x[j];
            for off in 1..=self.kd.min(self.n - 1 - j) {
                let a = self.data[base + off];
                y[j + off] += a * x[j];
                y[j] += a * x[j + off];
            }
        }
        y
    }

    /// `self * rhs` for a dense right-hand side.
    pub fn mul_dense(&self, rhs: &DMatrix<T>) -> DMatrix<T> {
        assert_eq!(rhs.nrows(), self.n);
        let mut out = DMatrix::zeros(self.n, rhs.ncols());
        for c in 0..rhs.ncols() {
            let col = self.mul_vec(&rhs.column(c).into_owned());
            out.set_column(c, &col);
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Band Cholesky factorization `A = L L^T`.
    pub fn cholesky(&self) -> Result<BandedCholesky<T>> {
        let (n, kd) = (self.n, self.kd);
        let w = kd + 1;
        let mut l = self.data.clone();
        for j in 0..n {
            let k0 = j.saturating_sub(kd);
            let mut s = l[j * w];
            for k in k0..j {
                let ljk = l[k * w + (j - k)];
                s -= ljk * ljk;
            }
            if !(s > T::zero()) || !s.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    row: j,
                    pivot: s.to_f64_lossy(),
                });
            }
            let d = s.sqrt();
            l[j * w] = d;
            for i in (j + 1)..(j + w).min(n) {
                let mut v = l[j * w + (i - j)];
                for k in i.saturating_sub(kd)..j {
                    v -= l[k * w + (i - k)] * l[k * w + (j - k)];
                }
                l[j * w + (i - j)] = v / d;
            }
        }
        Ok(BandedCholesky { n, kd, data: l })
    }
}

/// Lower-triangular band factor produced by [`SymBanded::cholesky`].
#[derive(Debug, Clone)]
pub struct BandedCholesky<T> {
    n: usize,
    kd: usize,
    data: Vec<T>,
}

impl<T: Real> BandedCholesky<T> {
    #[inline]
    fn l(&self, i: usize, j: usize) -> T {
        self.data[j * (self.kd + 1) + (i - j)]
    }

    /// Solves `L y = b` in place.
    pub fn forward_substitute(&self, b: &mut DVector<T>) {
        for i in 0..self.n {
            let mut v = b[i];
            for k in i.saturating_sub(self.kd)..i {
                v -= self.l(i, k) * b[k];
            }
            b[i] = v / self.l(i, i);
        }
    }

    /// Solves `L^T x = y` in place.
    pub fn backward_substitute(&self, y: &mut DVector<T>) {
        for i in (0..self.n).rev() {
            let mut v = y[i];
            for k in (i + 1)..(i + self.kd + 1).min(self.n) {
                v -= self.l(k, i) * y[k];
            }
            y[i] = v / self.l(i, i);
        }
    }

    pub fn solve(&self, rhs: &DVector<T>) -> DVector<T> {
        assert_eq!(rhs.len(), self.n);
        let mut x = rhs.clone();
        self.forward_substitute(&mut x);
        self.backward_substitute(&mut x);
        x
    }

    pub fn log_det(&self) -> T {
        let two = T::one() + T::one();
        (0..self.n).fold(T::zero(), |acc, i| acc + two * self.l(i, i).ln())
    }
}

/// Solves `H x = rhs` for banded symmetric positive definite `H`.
pub fn banded_cholesky_solve<T: Real>(h: &SymBanded<T>, rhs: &DVector<T>) -> Result<DVector<T>> {
    if rhs.len() != h.dim() {
        return Err(Error::Shape(format!(
            "rhs has length {}, matrix has dimension {}",
            rhs.len(),
            h.dim()
        )));
    }
    Ok(h.cholesky()?.solve(rhs))
}
