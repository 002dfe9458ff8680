//! Small dense linear-algebra helpers shared across the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Force exact symmetry, averaging away rounding skew from products.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let mt = m.transpose();
    *m += mt;
    *m *= 0.5;
}

/// Returns the symmetrized copy of `m`.
pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    s
}

/// True iff `m` is symmetric (to a small relative tolerance) and admits a
/// Cholesky factorization.
pub fn is_spd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1e-300);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                return false;
            }
        }
    }
    Cholesky::new(m.clone()).is_some()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().min()
}

/// True iff all eigenvalues of the symmetric matrix `m` are at least `-tol`.
pub fn is_psd_within(m: &DMatrix<f64>, tol: f64) -> bool {
    min_eigenvalue(&symmetric_part(m)) >= -tol
}

/// Cholesky factorization that reports failure as an error.
pub fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetric_part(m)).ok_or(Error::NotPositiveDefinite(what))
}

/// Inverse of an SPD matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let mut inv = cholesky(m, what)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Pseudo-inverse of a symmetric PSD matrix: eigenvalues below
/// `tol * max(1, λ_max)` are treated as exact zeros.
pub fn psd_pseudo_inverse(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let eig = symmetric_part(m).symmetric_eigen();
    let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let cutoff = tol * lam_max.max(1.0);
    let mut inv = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cutoff {
            let v = eig.eigenvectors.column(k);
            inv += v * v.transpose() / lam;
        }
    }
    inv
}

/// Relative L2 distance between two vectors, with an absolute floor so that
/// near-zero references do not blow up the ratio.
pub fn rel_err_vec(got: &DVector<f64>, want: &DVector<f64>) -> f64 {
    (got - want).norm() / want.norm().max(1e-12)
}

/// Relative Frobenius distance between two matrices.
pub fn rel_err_mat(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    (got - want).norm() / want.norm().max(1e-12)
}

/// Vector of iid standard normal draws.
pub fn standard_normal_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// Draw from N(mean, cov); `cov` must be SPD.
pub fn sample_gaussian<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = cholesky(cov, "sampling covariance")?;
    Ok(mean + chol.l() * standard_normal_vector(mean.len(), rng))
}

/// Random SPD matrix with eigenvalues bounded away from zero. Used by tests
/// and random-instance generators.
pub fn random_spd<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let b = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut m = &b * b.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.2;
    symmetrize(&mut m);
    m
}

/// Random SPD matrix that is exactly block tridiagonal with `blocks` square
/// blocks of size `n`: built as `B Bᵀ + 0.1 I` from a block lower-bidiagonal
/// `B`, so no fill appears outside the band.
pub fn random_block_tridiag_spd<R: Rng + ?Sized>(
    blocks: usize,
    n: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let dim = blocks * n;
    let mut b = DMatrix::zeros(dim, dim);
    for tau in 0..blocks {
        let d = random_spd(n, rng);
        b.view_mut((tau * n, tau * n), (n, n)).copy_from(&d);
        if tau > 0 {
            let e = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.5);
            b.view_mut((tau * n, (tau - 1) * n), (n, n)).copy_from(&e);
        }
    }
    let mut m = &b * b.transpose() + DMatrix::identity(dim, dim) * 0.1;
    symmetrize(&mut m);
    m
}
