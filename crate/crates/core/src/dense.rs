//! Dense assembly and direct solves for small grids: exact subsolvers,
//! Schur complements and spectra.

use std::sync::Arc;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use nalgebra::{DMatrix, DVector};

use crate::error::{Result, StokesError};

/// Largest unknown count accepted by dense routines.
pub const DENSE_CAP: usize = 20_000;

/// Column-by-column probe of a linear map on `R^n`: column `j` is `op(e_j)`.
pub fn assemble_dense(n: usize, mut op: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<DMatrix<f64>> {
    if n > DENSE_CAP {
        return Err(StokesError::TooLarge { dofs: n, cap: DENSE_CAP });
    }
    let mut e = vec![0.0; n];
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        e[j] = 1.0;
        cols.push(op(&e)?);
        e[j] = 0.0;
    }
    let rows = cols.first().map_or(0, Vec::len);
    if cols.iter().any(|c| c.len() != rows) {
        return Err(StokesError::LayoutMismatch("operator output length varies".into()));
    }
    Ok(DMatrix::from_fn(rows, n, |i, j| cols[j][i]))
}

/// Direct solver for a square matrix whose null space, if any, is spanned
/// by the given vectors. Singular symmetric systems are regularized as
/// `L + s Z Z^T` and solved on the complement of `Z`.
#[derive(Clone)]
pub struct DenseSolver {
    lu: Arc<PartialPivLu<f64>>,
    matrix: DMatrix<f64>,
    null: Vec<DVector<f64>>,
}

impl std::fmt::Debug for DenseSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DenseSolver").field("dim", &self.dim()).field("null", &self.null.len()).finish()
    }
}

impl DenseSolver {
    pub fn new(matrix: DMatrix<f64>, null: Vec<Vec<f64>>) -> Result<Self> {
        let n = matrix.nrows();
        if n != matrix.ncols() {
            return Err(StokesError::LayoutMismatch("dense solve needs a square matrix".into()));
        }
        let null: Vec<DVector<f64>> = orthonormalize(null.into_iter().map(DVector::from_vec).collect());
        let scale = matrix.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let aug = Mat::from_fn(n, n, |i, j| matrix[(i, j)] + null.iter().map(|z| scale * z[i] * z[j]).sum::<f64>());
        let lu = aug.partial_piv_lu();
        let pivots_ok = (0..n).all(|i| {
            let u = lu.U()[(i, i)];
            u.is_finite() && u != 0.0
        });
        if !pivots_ok {
            return Err(StokesError::Singular("dense factorization has a zero pivot".into()));
        }
        Ok(Self { lu: Arc::new(lu), matrix, null })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn project(&self, v: &mut DVector<f64>) {
        for z in &self.null {
            let c = z.dot(v);
            v.axpy(-c, z, 1.0);
        }
    }

    /// Solves on the complement of the null space: the right-hand side is
    /// projected first and the solution carries no null component.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = DVector::from_column_slice(b);
        self.project(&mut rhs);
        let sol = self.lu.solve(Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]));
        let mut x = DVector::from_fn(rhs.len(), |i, _| sol[(i, 0)]);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(StokesError::Singular("dense back substitution failed".into()));
        }
        self.project(&mut x);
        let res = (&self.matrix * &x - &rhs).norm();
        let scale = self.matrix.norm() * x.norm() + rhs.norm();
        if !(res <= 1e-8 * scale) && scale > 0.0 {
            return Err(StokesError::Singular(format!("residual {res:e} after dense solve; missing null vector?")));
        }
        Ok(x.as_slice().to_vec())
    }
}

fn orthonormalize(vs: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for mut v in vs {
        for q in &out {
            let c = q.dot(&v);
            v.axpy(-c, q, 1.0);
        }
        let n = v.norm();
        if n > 0.0 {
            out.push(v / n);
        }
    }
    out
}
