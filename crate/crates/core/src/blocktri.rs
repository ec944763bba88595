//! Symmetric block-tridiagonal systems.
//!
//! The Gauss-Newton normal equations of a knot chain couple each knot only to
//! its neighbours, so the Hessian is block-tridiagonal and a block Cholesky
//! factorization solves it in time linear in the number of knots.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// `H` with diagonal blocks `diag[k]` and upper blocks `upper[k] = H(k, k+1)`,
/// plus a right-hand side.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTridiagonal<T: Real> {
    pub diag: Vec<DMatrix<T>>,
    pub upper: Vec<DMatrix<T>>,
    pub rhs: Vec<DVector<T>>,
}

impl<T: Real> BlockTridiagonal<T> {
    pub fn zeros(blocks: usize, size: usize) -> Self {
        Self {
            diag: vec![DMatrix::zeros(size, size); blocks],
            upper: vec![DMatrix::zeros(size, size); blocks.saturating_sub(1)],
            rhs: vec![DVector::zeros(size); blocks],
        }
    }

    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    /// Replaces block row/column `k` by the identity with zero right-hand
    /// side, removing those variables from the solve.
    pub fn fix(&mut self, k: usize) {
        let n = self.diag[k].nrows();
        self.diag[k] = DMatrix::identity(n, n);
        self.rhs[k].fill(T::zero());
        if k > 0 {
            self.upper[k - 1].fill(T::zero());
        }
        if k + 1 < self.diag.len() {
            self.upper[k].fill(T::zero());
        }
    }

    /// Assembles the dense matrix and right-hand side.
    pub fn to_dense(&self) -> (DMatrix<T>, DVector<T>) {
        let k = self.blocks();
        let n = if k == 0 { 0 } else { self.diag[0].nrows() };
        let mut h = DMatrix::zeros(k * n, k * n);
        let mut b = DVector::zeros(k * n);
        for i in 0..k {
            h.view_mut((i * n, i * n), (n, n)).copy_from(&self.diag[i]);
            b.rows_mut(i * n, n).copy_from(&self.rhs[i]);
            if i + 1 < k {
                h.view_mut((i * n, (i + 1) * n), (n, n))
                    .copy_from(&self.upper[i]);
                h.view_mut(((i + 1) * n, i * n), (n, n))
                    .copy_from(&self.upper[i].transpose());
            }
        }
        (h, b)
    }

    /// Solves `H x = rhs` by block Cholesky factorization.
    pub fn solve(&self) -> Result<Vec<DVector<T>>> {
        let k = self.blocks();
        let mut chol = Vec::with_capacity(k);
        // m[i] = H(i, i-1) L_{i-1}^-T
        let mut m: Vec<DMatrix<T>> = Vec::with_capacity(k);
        let mut y: Vec<DVector<T>> = Vec::with_capacity(k);
        for i in 0..k {
            let mut s = self.diag[i].clone();
            let mut r = self.rhs[i].clone();
            let mi = if i > 0 {
                let l_prev: &DMatrix<T> = &chol[i - 1];
                // Solve L_{i-1} X = U_{i-1} for X = M_i^T.
                let mt = l_prev
                    .solve_lower_triangular(&self.upper[i - 1])
                    .ok_or_else(|| Error::Singular(format!("block {} pivot", i - 1)))?;
                s -= mt.transpose() * &mt;
                r -= mt.transpose() * &y[i - 1];
                mt.transpose()
            } else {
                DMatrix::zeros(0, 0)
            };
            // symmetrize against accumulated round-off
            let s = (&s + s.transpose()) * lit::<T>(0.5);
            let l = s
                .cholesky()
                .ok_or_else(|| Error::Singular(format!("block {i} is not positive definite")))?
                .unpack();
            let yi = l
                .solve_lower_triangular(&r)
                .ok_or_else(|| Error::Singular(format!("block {i} pivot")))?;
            chol.push(l);
            m.push(mi);
            y.push(yi);
        }
        let mut x = vec![DVector::zeros(0); k];
        for i in (0..k).rev() {
            let mut r = y[i].clone();
            if i + 1 < k {
                r -= m[i + 1].transpose() * &x[i + 1];
            }
            x[i] = chol[i]
                .tr_solve_lower_triangular(&r)
                .ok_or_else(|| Error::Singular(format!("block {i} pivot")))?;
        }
        Ok(x)
    }
}
