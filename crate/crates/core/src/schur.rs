//! Approximate inverse of the pressure Schur complement `S = -D A^-1 G`.
//!
//! `S~^-1 r = -theta L~_rho^-1 r + V r`, with `V` the local viscosity:
//! `mu` (Laplacian form), `2 mu` (stress form) or `gamma + 4/3 mu`
//! (stress form with bulk viscosity). Steady flow needs no Poisson solve.

use serde::{Deserialize, Serialize};

use crate::dense::{assemble_dense, DenseSolver};
use crate::error::{Result, StokesError};
use crate::grid::{face_from_unknowns, face_to_unknowns, CellField, FaceField, GridSpec};
use crate::multigrid::{mg_solve_cell, MgHierarchy, SmootherParams};
use crate::operators::{apply_a, apply_lrho, div, grad, CoefficientSet, NullSpace, ViscousForm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchurSign {
    /// Pressure block `-S~^-1`, the consistent choice.
    Minus,
    /// Pressure block `+S~^-1`.
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchurConfig {
    pub sign: SchurSign,
    pub pressure_cycles: usize,
}

impl Default for SchurConfig {
    fn default() -> Self {
        Self { sign: SchurSign::Minus, pressure_cycles: 1 }
    }
}

impl SchurConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pressure_cycles == 0 {
            return Err(StokesError::InvalidParameter("pressure_cycles must be at least 1".into()));
        }
        Ok(())
    }
}

/// Local viscosity `V` at cell centers.
pub fn viscous_diagonal(coeff: &CoefficientSet) -> CellField {
    let g = *coeff.grid();
    CellField::from_fn(&g, |idx| {
        let mu = coeff.mu_cell.get(idx);
        match coeff.viscous_form {
            ViscousForm::Laplacian => mu,
            ViscousForm::Stress => 2.0 * mu,
            ViscousForm::StressBulk => coeff.gamma_cell.get(idx) + 4.0 / 3.0 * mu,
        }
    })
}

/// Approximate or exact inverse of `L_rho = D rho^-1 G` on mean-zero pressures.
#[derive(Debug, Clone)]
pub enum PoissonInverse {
    Multigrid { hierarchy: MgHierarchy, params: SmootherParams, cycles: usize },
    Dense(DenseSolver),
}

impl PoissonInverse {
    pub fn multigrid(coeff: &CoefficientSet, params: SmootherParams, cycles: usize) -> Result<Self> {
        Ok(Self::Multigrid { hierarchy: MgHierarchy::build(coeff)?, params, cycles })
    }

    pub fn dense(coeff: &CoefficientSet) -> Result<Self> {
        Ok(Self::Dense(dense_poisson_solver(coeff)?))
    }

    /// `phi = L~_rho^-1 r` after removing the mean of `r`; `phi` has zero mean.
    pub fn solve(&self, r: &CellField) -> Result<CellField> {
        let mut rhs = r.clone();
        rhs.subtract_mean();
        let mut phi = match self {
            Self::Multigrid { hierarchy, params, cycles } => mg_solve_cell(&rhs, hierarchy, params, *cycles)?,
            Self::Dense(s) => CellField::from_vec(r.grid(), s.solve(rhs.data())?)?,
        };
        phi.subtract_mean();
        Ok(phi)
    }
}

/// `S~^-1 r`. A Poisson inverse is required when `theta > 0`.
pub fn apply_schur_inv(r: &CellField, coeff: &CoefficientSet, poisson: Option<&PoissonInverse>) -> Result<CellField> {
    let phi = if coeff.theta > 0.0 {
        Some(poisson.ok_or(StokesError::MissingHierarchy)?.solve(r)?)
    } else {
        None
    };
    Ok(combine_schur_terms(r, coeff, phi.as_ref()))
}

/// `-theta phi + V r` for a precomputed `phi = L~_rho^-1 r`.
pub fn combine_schur_terms(r: &CellField, coeff: &CoefficientSet, phi: Option<&CellField>) -> CellField {
    let v = viscous_diagonal(coeff);
    let g = *r.grid();
    CellField::from_fn(&g, |idx| {
        let poisson = phi.map_or(0.0, |p| -coeff.theta * p.get(idx));
        poisson + v.get(idx) * r.get(idx)
    })
}

/// Pressure block of the preconditioners: `-S~^-1 r` for the minus sign,
/// `+S~^-1 r` for the plus sign.
pub fn pressure_block(s_inv_r: CellField, cfg: &SchurConfig) -> CellField {
    let mut out = s_inv_r;
    if cfg.sign == SchurSign::Minus {
        out.scale(-1.0);
    }
    out
}

fn dense_guard(g: &GridSpec) -> Result<()> {
    let n = g.num_unknowns();
    if n > crate::dense::DENSE_CAP {
        return Err(StokesError::TooLarge { dofs: n, cap: crate::dense::DENSE_CAP });
    }
    Ok(())
}

/// Dense factorization of `A` on the velocity unknowns, with constant
/// component modes as null vectors when they lie in the kernel.
pub fn dense_velocity_solver(coeff: &CoefficientSet) -> Result<DenseSolver> {
    let g = *coeff.grid();
    dense_guard(&g)?;
    let nu = g.num_velocity_unknowns();
    let m = assemble_dense(nu, |x| Ok(face_to_unknowns(&apply_a(&face_from_unknowns(&g, x), coeff)?)))?;
    let null = NullSpace::of(coeff)
        .velocity_components
        .iter()
        .map(|&a| {
            let z = FaceField::from_unknown_fn(&g, |c, _| if c == a { 1.0 } else { 0.0 });
            face_to_unknowns(&z)
        })
        .collect();
    DenseSolver::new(m, null)
}

/// Dense factorization of `L_rho` with the pressure constant as null vector.
pub fn dense_poisson_solver(coeff: &CoefficientSet) -> Result<DenseSolver> {
    let g = *coeff.grid();
    dense_guard(&g)?;
    let nc = g.num_cells();
    let m = assemble_dense(nc, |x| Ok(apply_lrho(&CellField::from_vec(&g, x.to_vec())?, coeff)?.data().to_vec()))?;
    DenseSolver::new(m, vec![vec![1.0; nc]])
}

/// The exact Schur complement `S p = -D A^-1 G p`, by dense factorization of `A`.
#[derive(Debug, Clone)]
pub struct ExactSchur {
    coeff: CoefficientSet,
    a_inv: DenseSolver,
}

impl ExactSchur {
    pub fn new(coeff: &CoefficientSet) -> Result<Self> {
        Ok(Self { coeff: coeff.clone(), a_inv: dense_velocity_solver(coeff)? })
    }

    pub fn apply(&self, p: &CellField) -> Result<CellField> {
        let g = *self.coeff.grid();
        let gp = face_to_unknowns(&grad(p));
        let u = face_from_unknowns(&g, &self.a_inv.solve(&gp)?);
        let mut s = div(&u);
        s.scale(-1.0);
        Ok(s)
    }
}

/// One-shot form of [`ExactSchur::apply`].
pub fn exact_schur_apply(p: &CellField, coeff: &CoefficientSet) -> Result<CellField> {
    ExactSchur::new(coeff)?.apply(p)
}
