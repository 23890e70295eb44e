//! Dense spectra on small grids: the saddle-point matrix `M`, the Schur
//! complement `S = -D A^-1 G` and the preconditioned `S~^-1 S` (steady).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use crate::dense::{assemble_dense, DENSE_CAP};
use crate::error::{Result, StokesError};
use crate::grid::{face_from_unknowns, face_to_unknowns, CellField, GridSpec, StokesVector};
use crate::operators::{apply_m, div, grad, lap_pressure, CoefficientSet};
use crate::schur::{viscous_diagonal, ExactSchur};

pub type DenseMatrix = DMatrix<f64>;

/// `M` on the unknown space.
pub fn assemble_m(coeff: &CoefficientSet) -> Result<DenseMatrix> {
    let g = *coeff.grid();
    assemble_dense(g.num_unknowns(), |x| Ok(apply_m(&StokesVector::from_unknowns(&g, x)?, coeff)?.to_unknowns()))
}

/// Divergence from velocity unknowns to cells.
pub fn assemble_div(g: &GridSpec) -> Result<DenseMatrix> {
    assemble_dense(g.num_velocity_unknowns(), |x| Ok(div(&face_from_unknowns(g, x)).data().to_vec()))
}

/// Gradient from cells to velocity unknowns.
pub fn assemble_grad(g: &GridSpec) -> Result<DenseMatrix> {
    assemble_dense(g.num_cells(), |x| Ok(face_to_unknowns(&grad(&CellField::from_vec(g, x.to_vec())?))))
}

pub fn assemble_lap_pressure(g: &GridSpec) -> Result<DenseMatrix> {
    assemble_dense(g.num_cells(), |x| Ok(lap_pressure(&CellField::from_vec(g, x.to_vec())?).data().to_vec()))
}

/// Exact Schur complement `S = -D A^-1 G` on cells.
pub fn assemble_schur(coeff: &CoefficientSet) -> Result<DenseMatrix> {
    let g = *coeff.grid();
    let s = ExactSchur::new(coeff)?;
    assemble_dense(g.num_cells(), |x| Ok(s.apply(&CellField::from_vec(&g, x.to_vec())?)?.data().to_vec()))
}

fn max_abs(a: &DenseMatrix) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn check_symmetric(a: &DenseMatrix) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(StokesError::LayoutMismatch("eigenvalues need a square matrix".into()));
    }
    let asym = (a - a.transpose()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if asym > 1e-10 * max_abs(a).max(f64::MIN_POSITIVE) {
        return Err(StokesError::NotSymmetric(asym));
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, ascending (blocked tridiagonalization
/// with a divide-and-conquer tridiagonal solver).
pub fn sym_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    check_symmetric(a)?;
    let sym = faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut ev = sym
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| StokesError::Singular(format!("eigenvalue iteration failed: {e:?}")))?;
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
/// Sweeps until the off-diagonal Frobenius norm falls below `1e-14 ||A||_F`.
pub fn jacobi_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    check_symmetric(a)?;
    let n = a.nrows();
    let mut m = (a + a.transpose()) * 0.5;
    let total = m.norm();
    let off = |m: &DenseMatrix| {
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    for _ in 0..100 {
        if off(&m) <= 1e-14 * total {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumTarget {
    M,
    S,
    PrecondS,
}

impl std::str::FromStr for SpectrumTarget {
    type Err = StokesError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "m" => Ok(Self::M),
            "s" => Ok(Self::S),
            "precond_s" | "preconds" => Ok(Self::PrecondS),
            other => Err(StokesError::InvalidParameter(format!("unknown spectrum target {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width bins over `[lo, hi]`; values outside are clamped into the end bins.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Histogram {
    let bins = bins.max(1);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let k = ((v - lo) / width).floor();
        let k = if k < 0.0 { 0 } else { (k as usize).min(bins - 1) };
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub target: SpectrumTarget,
    pub size: usize,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub tol_zero: f64,
    pub tol_unit: f64,
    /// `|lambda| <= tol_zero`.
    pub zero_count: usize,
    pub nonpositive_count: usize,
    /// `|lambda - 1| > tol_unit`.
    pub non_unit_count: usize,
    pub min_nonzero: Option<f64>,
    pub max_nonzero: Option<f64>,
    /// Fraction of all eigenvalues inside (0.99, 1.01).
    pub clustered_fraction: f64,
    pub histogram: Histogram,
}

impl SpectrumReport {
    pub fn from_eigenvalues(target: SpectrumTarget, eigenvalues: Vec<f64>, bins: usize) -> Self {
        let scale = eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol_zero = 1e-8 * scale;
        let tol_unit = 1e-8;
        let zero_count = eigenvalues.iter().filter(|v| v.abs() <= tol_zero).count();
        // Exact zeros satisfy the relation `0 <= 0` regardless of sign noise.
        let nonpositive_count = eigenvalues.iter().filter(|&&v| v <= tol_zero).count();
        let non_unit_count = eigenvalues.iter().filter(|v| (*v - 1.0).abs() > tol_unit).count();
        let nonzero: Vec<f64> = eigenvalues.iter().copied().filter(|v| v.abs() > tol_zero).collect();
        let min_nonzero = nonzero.iter().copied().reduce(f64::min);
        let max_nonzero = nonzero.iter().copied().reduce(f64::max);
        let clustered = eigenvalues.iter().filter(|&&v| v > 0.99 && v < 1.01).count();
        let n = eigenvalues.len();
        let lo = eigenvalues.first().copied().unwrap_or(0.0).min(0.0);
        let hi = eigenvalues.last().copied().unwrap_or(1.0).max(lo + f64::EPSILON);
        Self {
            target,
            size: n,
            histogram: histogram(&eigenvalues, bins, lo, hi),
            eigenvalues,
            tol_zero,
            tol_unit,
            zero_count,
            nonpositive_count,
            non_unit_count,
            min_nonzero,
            max_nonzero,
            clustered_fraction: if n > 0 { clustered as f64 / n as f64 } else { 0.0 },
        }
    }
}

/// Dense spectrum of `M`, `S` or `V^1/2 S V^1/2` (similar to `S~^-1 S` for steady flow).
pub fn analyze_stokes_spectrum(coeff: &CoefficientSet, target: SpectrumTarget, bins: usize) -> Result<SpectrumReport> {
    let g = *coeff.grid();
    if g.num_unknowns() > DENSE_CAP {
        return Err(StokesError::TooLarge { dofs: g.num_unknowns(), cap: DENSE_CAP });
    }
    let matrix = match target {
        SpectrumTarget::M => assemble_m(coeff)?,
        SpectrumTarget::S => symmetrized(assemble_schur(coeff)?),
        SpectrumTarget::PrecondS => {
            if coeff.theta != 0.0 {
                return Err(StokesError::InvalidParameter("preconditioned Schur spectrum needs steady flow".into()));
            }
            let s = assemble_schur(coeff)?;
            let v = viscous_diagonal(coeff);
            let root: Vec<f64> = v.data().iter().map(|x| x.sqrt()).collect();
            symmetrized(DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| root[i] * s[(i, j)] * root[j]))
        }
    };
    Ok(SpectrumReport::from_eigenvalues(target, sym_eigenvalues(&matrix)?, bins))
}

/// Removes round-off asymmetry left by the dense solves.
fn symmetrized(a: DenseMatrix) -> DenseMatrix {
    (&a + a.transpose()) * 0.5
}
