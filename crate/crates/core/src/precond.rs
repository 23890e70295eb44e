//! Block preconditioners `P1`..`P5` built from a velocity subsolver
//! `A~^-1`, a density-weighted Poisson subsolver and the Schur
//! approximation.
//!
//! Every application ends with the null-space projection, so each
//! preconditioner is a fixed linear map.

use serde::{Deserialize, Serialize};

use crate::dense::DenseSolver;
use crate::error::{Result, StokesError};
use crate::grid::{face_from_unknowns, face_to_unknowns, FaceField, StokesVector};
use crate::multigrid::{mg_solve_face, MgHierarchy, SmootherParams};
use crate::operators::{apply_a, div, grad, CoefficientSet, NullSpace};
use crate::schur::{combine_schur_terms, dense_velocity_solver, pressure_block, PoissonInverse, SchurConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecondKind {
    /// Projection-method preconditioner.
    P1,
    /// Lower block triangular.
    P2,
    /// Upper block triangular.
    P3,
    /// Block diagonal.
    P4,
    /// Symmetric (two velocity solves).
    P5,
    Identity,
}

impl PrecondKind {
    pub const ALL: [PrecondKind; 6] = [Self::P1, Self::P2, Self::P3, Self::P4, Self::P5, Self::Identity];
}

impl std::str::FromStr for PrecondKind {
    type Err = StokesError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p1" => Ok(Self::P1),
            "p2" => Ok(Self::P2),
            "p3" => Ok(Self::P3),
            "p4" => Ok(Self::P4),
            "p5" => Ok(Self::P5),
            "identity" | "none" => Ok(Self::Identity),
            other => Err(StokesError::InvalidParameter(format!("unknown preconditioner {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecondConfig {
    pub kind: PrecondKind,
    pub velocity_cycles: usize,
    pub schur: SchurConfig,
    /// Dense LU subsolvers in place of multigrid (small grids only).
    pub exact_subsolvers: bool,
    pub smoother: SmootherParams,
}

impl Default for PrecondConfig {
    fn default() -> Self {
        Self {
            kind: PrecondKind::P2,
            velocity_cycles: 1,
            schur: SchurConfig::default(),
            exact_subsolvers: false,
            smoother: SmootherParams::default(),
        }
    }
}

impl PrecondConfig {
    pub fn new(kind: PrecondKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn exact(kind: PrecondKind) -> Self {
        Self { kind, exact_subsolvers: true, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.velocity_cycles == 0 {
            return Err(StokesError::InvalidParameter("velocity_cycles must be at least 1".into()));
        }
        self.schur.validate()?;
        self.smoother.validate()
    }
}

#[derive(Debug, Clone)]
enum VelocityInverse {
    Multigrid { hierarchy: MgHierarchy, params: SmootherParams, cycles: usize },
    Dense(DenseSolver),
}

impl VelocityInverse {
    fn solve(&self, r: &FaceField, null: &NullSpace) -> Result<FaceField> {
        let mut rhs = r.clone();
        null.project_velocity(&mut rhs);
        let mut x = match self {
            Self::Multigrid { hierarchy, params, cycles } => mg_solve_face(&rhs, hierarchy, params, *cycles)?,
            Self::Dense(s) => face_from_unknowns(r.grid(), &s.solve(&face_to_unknowns(&rhs))?),
        };
        null.project_velocity(&mut x);
        Ok(x)
    }
}

/// A preconditioner with its subsolvers set up for one coefficient set.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    cfg: PrecondConfig,
    coeff: CoefficientSet,
    null: NullSpace,
    velocity: Option<VelocityInverse>,
    poisson: Option<PoissonInverse>,
}

impl Preconditioner {
    pub fn new(coeff: &CoefficientSet, cfg: &PrecondConfig) -> Result<Self> {
        cfg.validate()?;
        coeff.validate()?;
        let kind = cfg.kind;
        let needs_velocity = kind != PrecondKind::Identity;
        let needs_poisson = kind == PrecondKind::P1 || (needs_velocity && coeff.theta > 0.0);
        let (velocity, poisson) = if !needs_velocity {
            (None, None)
        } else if cfg.exact_subsolvers {
            let v = VelocityInverse::Dense(dense_velocity_solver(coeff)?);
            let p = if needs_poisson { Some(PoissonInverse::dense(coeff)?) } else { None };
            (Some(v), p)
        } else {
            let hierarchy = MgHierarchy::build(coeff)?;
            let p = needs_poisson.then(|| PoissonInverse::Multigrid {
                hierarchy: hierarchy.clone(),
                params: cfg.smoother,
                cycles: cfg.schur.pressure_cycles,
            });
            let v = VelocityInverse::Multigrid { hierarchy, params: cfg.smoother, cycles: cfg.velocity_cycles };
            (Some(v), p)
        };
        if let Some(PoissonInverse::Multigrid { hierarchy, .. }) = &poisson {
            if hierarchy.finest().beta.is_none() {
                return Err(StokesError::InvalidCoefficients("Poisson subsolver needs positive density".into()));
            }
        }
        Ok(Self { cfg: *cfg, coeff: coeff.clone(), null: NullSpace::of(coeff), velocity, poisson })
    }

    pub fn config(&self) -> &PrecondConfig {
        &self.cfg
    }

    pub fn null_space(&self) -> &NullSpace {
        &self.null
    }

    /// Scalar V-cycles per application: `d` per velocity solve per cycle,
    /// plus the pressure cycles when a Poisson solve occurs.
    pub fn cost_per_application(&self) -> usize {
        let d = self.coeff.grid().dim();
        let v = d * self.cfg.velocity_cycles;
        let p = if self.poisson.is_some() { self.cfg.schur.pressure_cycles } else { 0 };
        match self.cfg.kind {
            PrecondKind::Identity => 0,
            PrecondKind::P5 => 2 * v + p,
            _ => v + p,
        }
    }

    fn a_inv(&self, r: &FaceField) -> Result<FaceField> {
        self.velocity.as_ref().expect("velocity subsolver").solve(r, &self.null)
    }

    /// `-S~^-1 r` (or `+` for the plus sign).
    fn schur_block(&self, r: &crate::grid::CellField) -> Result<crate::grid::CellField> {
        let phi = match (&self.poisson, self.coeff.theta > 0.0) {
            (Some(p), true) => Some(p.solve(r)?),
            _ => None,
        };
        Ok(pressure_block(combine_schur_terms(r, &self.coeff, phi.as_ref()), &self.cfg.schur))
    }

    pub fn apply(&self, r: &StokesVector) -> Result<StokesVector> {
        if r.grid() != self.coeff.grid() {
            return Err(StokesError::LayoutMismatch("residual and preconditioner grids differ".into()));
        }
        let mut x = match self.cfg.kind {
            PrecondKind::Identity => r.clone(),
            PrecondKind::P1 => self.apply_p1(r)?,
            PrecondKind::P2 => {
                let u = self.a_inv(&r.u)?;
                let mut bc = div(&u);
                bc.axpy(1.0, &r.p)?;
                StokesVector::new(u, self.schur_block(&bc)?)?
            }
            PrecondKind::P3 => {
                let p = self.schur_block(&r.p)?;
                let mut ru = r.u.clone();
                ru.axpy(-1.0, &grad(&p))?;
                StokesVector::new(self.a_inv(&ru)?, p)?
            }
            PrecondKind::P4 => StokesVector::new(self.a_inv(&r.u)?, self.schur_block(&r.p)?)?,
            PrecondKind::P5 => {
                let u_star = self.a_inv(&r.u)?;
                let mut bc = div(&u_star);
                bc.axpy(1.0, &r.p)?;
                let p = self.schur_block(&bc)?;
                // Second solve for the increment from u*, which keeps it linear.
                let mut ru = r.u.clone();
                ru.axpy(-1.0, &grad(&p))?;
                ru.axpy(-1.0, &apply_a(&u_star, &self.coeff)?)?;
                let mut u = u_star;
                u.axpy(1.0, &self.a_inv(&ru)?)?;
                StokesVector::new(u, p)?
            }
        };
        x.u.zero_boundary();
        self.null.project(&mut x);
        Ok(x)
    }

    /// One projection step: velocity solve, Poisson solve for `phi` on the
    /// divergence defect, velocity correction `-rho^-1 G phi`, and the
    /// pressure from the same `phi`.
    fn apply_p1(&self, r: &StokesVector) -> Result<StokesVector> {
        let u_star = self.a_inv(&r.u)?;
        let mut bc = div(&u_star);
        bc.axpy(1.0, &r.p)?;
        let phi = self.poisson.as_ref().expect("P1 Poisson subsolver").solve(&bc)?;
        let g = *r.grid();
        let gphi = grad(&phi);
        let rho = &self.coeff.rho_face;
        let corr = FaceField::from_unknown_fn(&g, |a, idx| gphi.get(a, idx) / rho.get(a, idx));
        let mut u = u_star;
        u.axpy(-1.0, &corr)?;
        let p = pressure_block(combine_schur_terms(&bc, &self.coeff, Some(&phi)), &self.cfg.schur);
        StokesVector::new(u, p)
    }
}

/// One-shot application that builds the subsolvers on the fly.
pub fn apply_precond(r: &StokesVector, coeff: &CoefficientSet, cfg: &PrecondConfig) -> Result<StokesVector> {
    Preconditioner::new(coeff, cfg)?.apply(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundaryCondition::*, CellField, GridSpec};
    use crate::operators::{apply_m, ViscousForm};

    fn coeff(g: &GridSpec, theta: f64, mu: f64) -> CoefficientSet {
        CoefficientSet::new(theta, CellField::constant(g, 1.0), CellField::constant(g, mu), None, ViscousForm::Stress).unwrap()
    }

    fn sample(g: &GridSpec, seed: usize) -> StokesVector {
        let u = FaceField::from_unknown_fn(g, |a, i| (((a + 1) * 31 + i[0] * 17 + i[1] * 7 + seed) % 13) as f64 - 6.0);
        let p = CellField::from_fn(g, |i| ((i[0] * 5 + i[1] * 11 + seed) % 9) as f64 - 4.0);
        StokesVector::new(u, p).unwrap()
    }

    fn max_diff(a: &StokesVector, b: &StokesVector) -> f64 {
        a.to_unknowns().iter().zip(b.to_unknowns()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_passes_through() {
        let g = GridSpec::uniform(2, 8, 1.0, NoSlip).unwrap();
        let c = coeff(&g, 0.0, 1.0);
        let mut r = sample(&g, 1);
        r.p.subtract_mean();
        assert_eq!(apply_precond(&r, &c, &PrecondConfig::new(PrecondKind::Identity)).unwrap(), r);
    }

    #[test]
    fn p1_exact_inverts_periodic_constant_steady() {
        let g = GridSpec::uniform(2, 8, 1.0, Periodic).unwrap();
        let c = coeff(&g, 0.0, 2.0);
        let mut x = sample(&g, 3);
        NullSpace::of(&c).project(&mut x);
        let y = apply_precond(&apply_m(&x, &c).unwrap(), &c, &PrecondConfig::exact(PrecondKind::P1)).unwrap();
        assert!(max_diff(&x, &y) < 1e-10);
    }

    #[test]
    fn p2_and_p4_agree_without_coupling() {
        let g = GridSpec::uniform(2, 8, 1.0, Periodic).unwrap();
        let c = coeff(&g, 0.0, 1.0);
        // A is invertible on mean-zero fields and commutes with D G here, so
        // r_u = grad-free (curl) data gives D A^-1 r_u = 0.
        let psi = CellField::from_fn(&g, |i| ((i[0] * 3 + i[1] * i[1]) % 5) as f64);
        let u = FaceField::from_unknown_fn(&g, |a, i| {
            // Discrete curl of a node stream function sampled from psi.
            let n = |di: usize, dj: usize| psi.get([(i[0] + di) % 8, (i[1] + dj) % 8, 0]);
            if a == 0 { n(0, 1) - n(0, 0) } else { n(0, 0) - n(1, 0) }
        });
        assert!(div(&u).norm2() < 1e-12);
        let r = StokesVector::new(u, CellField::zeros(&g)).unwrap();
        let p2 = apply_precond(&r, &c, &PrecondConfig::exact(PrecondKind::P2)).unwrap();
        let p4 = apply_precond(&r, &c, &PrecondConfig::exact(PrecondKind::P4)).unwrap();
        assert!(max_diff(&p2, &p4) < 1e-12);
    }

    #[test]
    fn inviscid_p2_is_quadratic() {
        let g = GridSpec::uniform(2, 8, 1.0, NoSlip).unwrap();
        let c = coeff(&g, 1.0, 0.0);
        let pre = Preconditioner::new(&c, &PrecondConfig::exact(PrecondKind::P2)).unwrap();
        let t = |v: &StokesVector| -> StokesVector {
            let mut w = pre.apply(&apply_m(v, &c).unwrap()).unwrap();
            w.axpy(-1.0, v).unwrap();
            w
        };
        let mut x = sample(&g, 5);
        x.p.subtract_mean();
        let tt = t(&t(&x));
        assert!(tt.norm2() < 1e-10 * x.norm2());
    }

    #[test]
    fn cost_formula() {
        let g = GridSpec::uniform(2, 8, 1.0, NoSlip).unwrap();
        let steady = coeff(&g, 0.0, 1.0);
        let unsteady = coeff(&g, 1.0, 1.0);
        let cost = |c: &CoefficientSet, k| Preconditioner::new(c, &PrecondConfig::new(k)).unwrap().cost_per_application();
        assert_eq!(cost(&steady, PrecondKind::P1), 3);
        assert_eq!(cost(&steady, PrecondKind::P2), 2);
        assert_eq!(cost(&unsteady, PrecondKind::P2), 3);
        assert_eq!(cost(&steady, PrecondKind::P5), 4);
        assert_eq!(cost(&unsteady, PrecondKind::P5), 5);
        assert_eq!(cost(&unsteady, PrecondKind::Identity), 0);
    }

    #[test]
    fn multigrid_preconditioners_are_linear_and_repeatable() {
        let g = GridSpec::uniform(2, 16, 1.0, NoSlip).unwrap();
        let c = coeff(&g, 0.5, 1.0);
        for kind in PrecondKind::ALL {
            let pre = Preconditioner::new(&c, &PrecondConfig::new(kind)).unwrap();
            let (a, b) = (sample(&g, 1), sample(&g, 2));
            let mut ab = a.clone();
            ab.scale(2.0);
            ab.axpy(-0.5, &b).unwrap();
            let mut expect = pre.apply(&a).unwrap();
            expect.scale(2.0);
            expect.axpy(-0.5, &pre.apply(&b).unwrap()).unwrap();
            let got = pre.apply(&ab).unwrap();
            assert!(max_diff(&got, &expect) <= 1e-12 * expect.norm2().max(1.0), "{kind:?}");
            assert_eq!(got, pre.apply(&ab).unwrap());
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("p3".parse::<PrecondKind>().unwrap(), PrecondKind::P3);
        assert!("p9".parse::<PrecondKind>().is_err());
    }
}
