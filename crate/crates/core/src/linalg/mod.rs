//! Dense and banded linear algebra used by the solver, the Laplace
//! components and the feedback recursion.

mod banded;

pub use banded::{banded_cholesky_solve, BandedCholesky, SymBanded};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Orthonormal basis of the numerical nullspace of a matrix.
#[derive(Debug, Clone)]
pub struct Nullspace<T: Real> {
    /// Columns span `{v : J v = 0}`.
    pub basis: DMatrix<T>,
    /// Numerical rank of the input matrix.
    pub rank: usize,
}

/// Computes an orthonormal nullspace basis of `j` from a full SVD.
///
/// Singular values below `tol * sigma_max` are treated as zero. A matrix with
/// fewer rows than columns is padded with zero rows first so that the SVD
/// returns a complete set of right singular vectors.
pub fn nullspace_basis<T: Real>(j: &DMatrix<T>, tol: T) -> Nullspace<T> {
    let n = j.ncols();
    if j.nrows() == 0 || n == 0 {
        return Nullspace {
            basis: DMatrix::identity(n, n),
            rank: 0,
        };
    }
    let padded = if j.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (j.nrows(), n)).copy_from(j);
        p
    } else {
        j.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors were requested");
    let sigma_max = svd.singular_values.iter().fold(T::zero(), |a, &s| a.max(s));
    let cutoff = tol * sigma_max;
    let mut keep = Vec::new();
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if sigma_max > T::zero() && s > cutoff {
            rank += 1;
        } else {
            keep.push(k);
        }
    }
    let mut basis = DMatrix::zeros(n, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        basis.set_column(c, &v_t.row(k).transpose());
    }
    Nullspace { basis, rank }
}

/// Log-determinant of a symmetric positive definite matrix via Cholesky.
pub fn spd_logdet<T: Real>(m: &DMatrix<T>) -> Result<T> {
    if m.nrows() == 0 {
        return Ok(T::zero());
    }
    let chol = m.clone().cholesky().ok_or_else(|| Error::Singular {
        min_eigenvalue: min_eigenvalue(m).to_f64_lossy(),
        threshold: 0.0,
    })?;
    let two = lit::<T>(2.0);
    Ok(chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(T::zero(), |acc, &d| acc + two * d.ln()))
}

pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .fold(T::max_value().unwrap_or_else(T::one), |a, &b| a.min(b))
}

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

/// Maximum absolute entry, zero for empty inputs.
pub fn amax<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
}

pub fn amax_mat<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_jacobian_gives_identity() {
        let j = DMatrix::<f64>::zeros(0, 4);
        let ns = nullspace_basis(&j, 1e-8);
        assert_eq!(ns.basis, DMatrix::identity(4, 4));
        assert_eq!(ns.rank, 0);
    }

    #[test]
    fn axis_aligned_kernel() {
        let j = DMatrix::from_row_slice(1, 2, &[1.0f64, 0.0]);
        let ns = nullspace_basis(&j, 1e-8);
        assert_eq!(ns.basis.ncols(), 1);
        assert!(ns.basis[(0, 0)].abs() < 1e-14);
        assert!((ns.basis[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn random_full_row_rank_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let j = DMatrix::from_fn(20, 50, |_, _| rng.random_range(-1.0..1.0));
        let ns = nullspace_basis(&j, 1e-8);
        assert_eq!(ns.rank, 20);
        assert_eq!(ns.basis.ncols(), 30);
        assert!(amax_mat(&(&j * &ns.basis)) < 1e-8);
        let gram = ns.basis.transpose() * &ns.basis;
        assert!(amax_mat(&(gram - DMatrix::identity(30, 30))) < 1e-10);
    }

    #[test]
    fn duplicated_rows_are_rank_deficient() {
        let j = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        let ns = nullspace_basis(&j, 1e-8);
        assert_eq!(ns.rank, 2);
        assert_eq!(ns.basis.ncols(), 1);
    }

    #[test]
    fn logdet_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 4.0]));
        assert!((spd_logdet(&m).unwrap() - 24f64.ln()).abs() < 1e-14);
        assert!(spd_logdet(&(-m)).is_err());
    }
}
