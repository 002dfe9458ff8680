//! Blockwise Cholesky factorization of a symmetric block-tridiagonal system.
//!
//! The window Hessian of a linear dynamics chain couples only adjacent
//! timestep blocks, so the primal system solves in a single forward pass over
//! the blocks followed by backward substitution. Factorization and each solve
//! cost a number of flops linear in the number of blocks, versus cubic for a
//! dense factorization of the whole window.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Cached factorization `M = L Lᵀ` of a block-tridiagonal SPD matrix, stored
/// as per-block lower-triangular factors plus the off-diagonal fill blocks.
#[derive(Debug, Clone)]
pub struct BlockTridiagChol {
    block: usize,
    /// `L_tau`: lower-triangular Cholesky factor of the tau-th pivot.
    diag_l: Vec<DMatrix<f64>>,
    /// `L_(tau,tau-1)`: fill block coupling tau with tau-1, for tau >= 1.
    off_l: Vec<DMatrix<f64>>,
}

impl BlockTridiagChol {
    /// Factors the matrix with diagonal blocks `diag` and sub-diagonal blocks
    /// `sub` (`sub[tau-1]` sits at block row `tau`, column `tau-1`).
    pub fn factor(diag: &[DMatrix<f64>], sub: &[DMatrix<f64>]) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::WindowTooShort("block-tridiagonal system needs a block"));
        }
        if sub.len() + 1 != diag.len() {
            return Err(Error::DimensionMismatch {
                context: "block-tridiagonal sub-diagonal count",
                expected: diag.len() - 1,
                got: sub.len(),
            });
        }
        let n = diag[0].nrows();
        let mut diag_l = Vec::with_capacity(diag.len());
        let mut off_l = Vec::with_capacity(sub.len());

        let mut pivot = diag[0].clone();
        for tau in 0..diag.len() {
            if tau > 0 {
                // Fill block: solve X L_(tau-1)ᵀ = E_tau, i.e. L Xᵀ = Eᵀ.
                let prev_l: &DMatrix<f64> = &diag_l[tau - 1];
                let xt = prev_l
                    .solve_lower_triangular(&sub[tau - 1].transpose())
                    .ok_or(Error::IndefiniteBlock(tau - 1))?;
                let x = xt.transpose();
                pivot = &diag[tau] - &x * x.transpose();
                off_l.push(x);
            }
            let chol = nalgebra::Cholesky::new(crate::linalg::symmetric_part(&pivot))
                .ok_or(Error::IndefiniteBlock(tau))?;
            diag_l.push(chol.l());
        }
        Ok(Self {
            block: n,
            diag_l,
            off_l,
        })
    }

    pub fn block_count(&self) -> usize {
        self.diag_l.len()
    }

    pub fn dim(&self) -> usize {
        self.block * self.diag_l.len()
    }

    /// Solves `M x = rhs` by one forward and one backward substitution pass
    /// over the blocks.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "block-tridiagonal rhs",
                expected: self.dim(),
                got: rhs.len(),
            });
        }
        let n = self.block;
        let k = self.diag_l.len();

        // Forward pass: L sigma = rhs.
        let mut sigma: Vec<DVector<f64>> = Vec::with_capacity(k);
        for tau in 0..k {
            let mut b = rhs.rows(tau * n, n).into_owned();
            if tau > 0 {
                b -= &self.off_l[tau - 1] * &sigma[tau - 1];
            }
            let s = self.diag_l[tau]
                .solve_lower_triangular(&b)
                .ok_or(Error::IndefiniteBlock(tau))?;
            sigma.push(s);
        }

        // Backward pass: Lᵀ x = sigma.
        let mut x = DVector::zeros(self.dim());
        for tau in (0..k).rev() {
            let mut b = sigma[tau].clone();
            if tau + 1 < k {
                b -= self.off_l[tau].transpose() * x.rows((tau + 1) * n, n);
            }
            let xt = self.diag_l[tau]
                .tr_solve_lower_triangular(&b)
                .ok_or(Error::IndefiniteBlock(tau))?;
            x.rows_mut(tau * n, n).copy_from(&xt);
        }
        Ok(x)
    }
}

/// Splits a dense block-tridiagonal matrix into its diagonal and
/// sub-diagonal block bands.
pub fn extract_bands(
    m: &DMatrix<f64>,
    n: usize,
    blocks: usize,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut diag = Vec::new();
    let mut sub = Vec::new();
    for tau in 0..blocks {
        diag.push(m.view((tau * n, tau * n), (n, n)).into_owned());
        if tau > 0 {
            sub.push(m.view((tau * n, (tau - 1) * n), (n, n)).into_owned());
        }
    }
    (diag, sub)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::linalg::{random_spd, rel_err_vec, standard_normal_vector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Random SPD block-tridiagonal matrix, returned as (dense, diag, sub).
    pub(crate) fn random_block_tridiag(
        blocks: usize,
        n: usize,
        rng: &mut ChaCha12Rng,
    ) -> (DMatrix<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let m = crate::linalg::random_block_tridiag_spd(blocks, n, rng);
        let (diag, sub) = extract_bands(&m, n, blocks);
        (m, diag, sub)
    }

    #[test]
    fn single_block_matches_dense() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let m = random_spd(4, &mut rng);
        let rhs = standard_normal_vector(4, &mut rng);
        let fast = BlockTridiagChol::factor(std::slice::from_ref(&m), &[]).unwrap();
        let dense = nalgebra::Cholesky::new(m).unwrap().solve(&rhs);
        assert!(rel_err_vec(&fast.solve(&rhs).unwrap(), &dense) < 1e-12);
    }

    #[test]
    fn matches_dense_solve_on_random_systems() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for blocks in [2usize, 3, 6, 11] {
            for n in [1usize, 2, 4] {
                let (m, diag, sub) = random_block_tridiag(blocks, n, &mut rng);
                let rhs = standard_normal_vector(blocks * n, &mut rng);
                let fast = BlockTridiagChol::factor(&diag, &sub).unwrap();
                let dense = nalgebra::Cholesky::new(m).unwrap().solve(&rhs);
                let got = fast.solve(&rhs).unwrap();
                assert!(
                    rel_err_vec(&got, &dense) < 1e-10,
                    "blocks={blocks} n={n} err={}",
                    rel_err_vec(&got, &dense)
                );
            }
        }
    }

    #[test]
    fn rejects_indefinite_blocks() {
        let diag = vec![DMatrix::from_element(1, 1, -1.0)];
        assert!(matches!(
            BlockTridiagChol::factor(&diag, &[]),
            Err(Error::IndefiniteBlock(0))
        ));
    }

    #[test]
    fn rejects_mismatched_band_lengths() {
        let d = DMatrix::identity(2, 2);
        assert!(BlockTridiagChol::factor(&[d.clone(), d.clone()], &[]).is_err());
    }
}
