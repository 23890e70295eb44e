//! Discrete spatial operators on the staggered grid.
//!
//! `div` maps faces to cells, `grad` maps cells to interior faces, and the
//! viscous operator is evaluated face by face through [`viscous_at`], the
//! same kernel the multigrid smoother relaxes with. The saddle-point
//! operator is `M (u, p) = (A u + G p, -D u)` with `A = theta rho - L_mu`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StokesError};
use crate::grid::{
    for_each_index, linear, BoundaryCondition, CellField, FaceField, GridSpec, NodeEdgeField,
    StokesVector, HI, LO,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViscousForm {
    /// `div(mu grad u)`, componentwise.
    Laplacian,
    /// `div(mu (grad u + grad u^T))`.
    Stress,
    /// Stress form plus `(gamma - 2/3 mu) (div u) I`.
    StressBulk,
}

/// Every coefficient entering `A` and the approximate Schur inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    /// Inertial weight (inverse time step); zero for steady flow.
    pub theta: f64,
    pub rho_cell: CellField,
    /// Face densities, arithmetic means of the two adjacent cells.
    pub rho_face: FaceField,
    pub mu_cell: CellField,
    /// Node (2D) / edge (3D) viscosities, means of the neighboring cells.
    pub mu_node_edge: NodeEdgeField,
    pub gamma_cell: CellField,
    pub viscous_form: ViscousForm,
}

impl CoefficientSet {
    /// Builds a set from cell-centered data and derives face/edge values.
    pub fn new(
        theta: f64,
        rho_cell: CellField,
        mu_cell: CellField,
        gamma_cell: Option<CellField>,
        viscous_form: ViscousForm,
    ) -> Result<Self> {
        let grid = *rho_cell.grid();
        if mu_cell.grid() != &grid {
            return Err(StokesError::LayoutMismatch("density and viscosity grids differ".into()));
        }
        let gamma_cell = gamma_cell.unwrap_or_else(|| CellField::zeros(&grid));
        if gamma_cell.grid() != &grid {
            return Err(StokesError::LayoutMismatch("bulk viscosity grid differs".into()));
        }
        let set = Self {
            theta,
            rho_face: average_to_faces(&rho_cell),
            mu_node_edge: average_to_nodes_edges(&mu_cell),
            rho_cell,
            mu_cell,
            gamma_cell,
            viscous_form,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn grid(&self) -> &GridSpec {
        self.rho_cell.grid()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(StokesError::InvalidCoefficients(m.to_string()));
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return bad("theta must be finite and nonnegative");
        }
        if self.mu_cell.data().iter().any(|&m| !(m >= 0.0)) {
            return bad("viscosity must be nonnegative");
        }
        if self.gamma_cell.data().iter().any(|&g| !(g >= 0.0)) {
            return bad("bulk viscosity must be nonnegative");
        }
        if self.theta > 0.0 && self.rho_cell.data().iter().any(|&r| !(r > 0.0)) {
            return bad("density must be positive for unsteady flow");
        }
        if self.theta == 0.0 && self.is_inviscid() {
            return bad("steady flow needs a nonzero viscosity");
        }
        Ok(())
    }

    pub fn is_inviscid(&self) -> bool {
        self.mu_cell.data().iter().all(|&m| m == 0.0) && self.gamma_cell.data().iter().all(|&g| g == 0.0)
    }

    /// Largest cell viscosity, the reference scale for rescaling.
    pub fn mu_max(&self) -> f64 {
        self.mu_cell.max()
    }

    /// Copy with every viscosity and `theta` multiplied by `c`, i.e. `A -> c A`.
    pub fn scaled_velocity_operator(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.theta *= c;
        out.mu_cell.scale(c);
        out.gamma_cell.scale(c);
        out.mu_node_edge.scale(c);
        out
    }
}

/// Face values as the mean of the two adjacent cells; a wall face takes
/// the value of its single interior neighbor.
pub fn average_to_faces(cell: &CellField) -> FaceField {
    let g = *cell.grid();
    FaceField::from_fn(&g, |a, idx| {
        let n = g.n(a);
        if g.periodic(a) {
            let mut lo = idx;
            lo[a] = (idx[a] + n - 1) % n;
            0.5 * (cell.get(lo) + cell.get(idx))
        } else if idx[a] == 0 {
            cell.get(idx)
        } else if idx[a] == n {
            let mut lo = idx;
            lo[a] = n - 1;
            cell.get(lo)
        } else {
            let mut lo = idx;
            lo[a] -= 1;
            0.5 * (cell.get(lo) + cell.get(idx))
        }
    })
}

/// Node/edge values as the mean of the neighboring in-domain cells
/// (four in the interior, two on a wall, one in a corner).
pub fn average_to_nodes_edges(cell: &CellField) -> NodeEdgeField {
    let g = *cell.grid();
    NodeEdgeField::from_fn(&g, |a, b, idx| {
        let mut sum = 0.0;
        let mut count = 0usize;
        for da in [0usize, 1] {
            for db in [0usize, 1] {
                let ia = neighbor_cell(&g, a, idx[a], da);
                let ib = neighbor_cell(&g, b, idx[b], db);
                if let (Some(ia), Some(ib)) = (ia, ib) {
                    let mut c = idx;
                    c[a] = ia;
                    c[b] = ib;
                    sum += cell.get(c);
                    count += 1;
                }
            }
        }
        sum / count as f64
    })
}

/// Cell below (`side = 0`) or above (`side = 1`) node `node` along `axis`.
fn neighbor_cell(g: &GridSpec, axis: usize, node: usize, side: usize) -> Option<usize> {
    let n = g.n(axis);
    if side == 1 {
        if g.periodic(axis) {
            Some(node % n)
        } else if node < n {
            Some(node)
        } else {
            None
        }
    } else if node > 0 {
        Some(node - 1)
    } else if g.periodic(axis) {
        Some(n - 1)
    } else {
        None
    }
}

#[inline(always)]
fn shifted(idx: [usize; 3], axis: usize, to: usize) -> [usize; 3] {
    let mut out = idx;
    out[axis] = to;
    out
}

#[inline(always)]
fn wrap_dec(i: usize, n: usize) -> usize {
    if i == 0 {
        n - 1
    } else {
        i - 1
    }
}

#[inline(always)]
fn wrap_inc(i: usize, n: usize) -> usize {
    if i + 1 == n {
        0
    } else {
        i + 1
    }
}

/// Divergence at cell centers, reading boundary faces as stored.
pub fn div(u: &FaceField) -> CellField {
    let g = *u.grid();
    let inv_h = 1.0 / g.h();
    CellField::from_fn(&g, |idx| div_at(&g, u, idx, inv_h))
}

#[inline(always)]
fn div_at(g: &GridSpec, u: &FaceField, idx: [usize; 3], inv_h: f64) -> f64 {
    let mut s = 0.0;
    for a in 0..g.dim() {
        let hi = if g.periodic(a) { wrap_inc(idx[a], g.n(a)) } else { idx[a] + 1 };
        s += (u.get(a, shifted(idx, a, hi)) - u.get(a, idx)) * inv_h;
    }
    s
}

/// Gradient on unknown faces; held boundary faces are zero.
pub fn grad(p: &CellField) -> FaceField {
    let g = *p.grid();
    let inv_h = 1.0 / g.h();
    FaceField::from_unknown_fn(&g, |a, idx| {
        let lo = wrap_dec(idx[a], g.n(a));
        let hi = idx[a];
        (p.get(shifted(idx, a, hi)) - p.get(shifted(idx, a, lo))) * inv_h
    })
}

/// Five/seven-point Laplacian with zero normal flux at walls, written
/// with the same arithmetic as `div(grad(p))`.
pub fn lap_pressure(p: &CellField) -> CellField {
    let g = *p.grid();
    let inv_h = 1.0 / g.h();
    CellField::from_fn(&g, |idx| {
        let pc = p.get(idx);
        let mut s = 0.0;
        for a in 0..g.dim() {
            let n = g.n(a);
            let (g_lo, g_hi) = if g.periodic(a) {
                let lo = p.get(shifted(idx, a, wrap_dec(idx[a], n)));
                let hi = p.get(shifted(idx, a, wrap_inc(idx[a], n)));
                ((pc - lo) * inv_h, (hi - pc) * inv_h)
            } else {
                let g_lo = if idx[a] == 0 { 0.0 } else { (pc - p.get(shifted(idx, a, idx[a] - 1))) * inv_h };
                let g_hi = if idx[a] + 1 == n { 0.0 } else { (p.get(shifted(idx, a, idx[a] + 1)) - pc) * inv_h };
                (g_lo, g_hi)
            };
            s += (g_hi - g_lo) * inv_h;
        }
        s
    })
}

/// Density-weighted Poisson operator `D rho^-1 G`.
pub fn apply_lrho(p: &CellField, coeff: &CoefficientSet) -> Result<CellField> {
    let g = *p.grid();
    if coeff.grid() != &g {
        return Err(StokesError::LayoutMismatch("pressure and coefficient grids differ".into()));
    }
    let mut gp = grad(p);
    for a in 0..g.dim() {
        let shape = g.face_shape(a);
        let rho = coeff.rho_face.comp(a);
        let mut bad = false;
        let comp = gp.comp_mut(a);
        for_each_index(&g.face_unknown_ranges(a), |idx| {
            let l = linear(shape, idx);
            if !(rho[l] > 0.0) {
                bad = true;
            }
            comp[l] /= rho[l];
        });
        if bad {
            return Err(StokesError::InvalidCoefficients("nonpositive face density".into()));
        }
    }
    Ok(div(&gp))
}

/// Tangential wall velocities for the affine (inhomogeneous) operator.
///
/// Entry `(b, side, a)` holds the axis-`a` velocity on the `side` wall
/// normal to `b`, laid out like the axis-`a` faces with the `b` extent
/// collapsed to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentialWalls {
    grid: GridSpec,
    values: Vec<Option<Vec<f64>>>,
}

impl TangentialWalls {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self { grid: *grid, values: vec![None; 18] }
    }

    fn slot(b: usize, side: usize, a: usize) -> usize {
        (b * 2 + side) * 3 + a
    }

    pub fn wall_shape(&self, b: usize, a: usize) -> [usize; 3] {
        let mut s = self.grid.face_shape(a);
        s[b] = 1;
        s
    }

    /// Sets the wall values of component `a` on wall `(b, side)` from
    /// `f(idx)`, with `idx[b]` fixed at zero.
    pub fn set_from_fn(&mut self, b: usize, side: usize, a: usize, mut f: impl FnMut([usize; 3]) -> f64) {
        let shape = self.wall_shape(b, a);
        let mut v = Vec::with_capacity(shape.iter().product());
        for_each_index(&[0..shape[0], 0..shape[1], 0..shape[2]], |idx| v.push(f(idx)));
        self.values[Self::slot(b, side, a)] = Some(v);
    }

    #[inline(always)]
    pub fn get(&self, b: usize, side: usize, a: usize, idx: [usize; 3]) -> f64 {
        match &self.values[Self::slot(b, side, a)] {
            Some(v) => v[linear(self.wall_shape(b, a), shifted(idx, b, 0))],
            None => 0.0,
        }
    }
}

/// Read access to face values, so the viscous kernel can run on a field
/// or on a unit impulse (for diagonal extraction).
pub trait FaceAccess {
    fn at(&self, a: usize, idx: [usize; 3]) -> f64;
}

impl FaceAccess for FaceField {
    #[inline(always)]
    fn at(&self, a: usize, idx: [usize; 3]) -> f64 {
        self.get(a, idx)
    }
}

/// Unit value at one face, zero elsewhere.
pub struct Impulse {
    pub comp: usize,
    pub idx: [usize; 3],
}

impl FaceAccess for Impulse {
    #[inline(always)]
    fn at(&self, a: usize, idx: [usize; 3]) -> f64 {
        if a == self.comp && idx == self.idx {
            1.0
        } else {
            0.0
        }
    }
}

/// Coefficients of the viscous operator on one grid level.
#[derive(Debug, Clone, Copy)]
pub struct ViscousParts<'a> {
    pub grid: &'a GridSpec,
    pub mu_cell: &'a CellField,
    pub mu_node_edge: &'a NodeEdgeField,
    pub gamma_cell: &'a CellField,
    pub form: ViscousForm,
}

impl<'a> ViscousParts<'a> {
    pub fn of(coeff: &'a CoefficientSet) -> Self {
        Self {
            grid: coeff.rho_cell.grid(),
            mu_cell: &coeff.mu_cell,
            mu_node_edge: &coeff.mu_node_edge,
            gamma_cell: &coeff.gamma_cell,
            form: coeff.viscous_form,
        }
    }
}

/// `(L_mu u)_a` at unknown face `f` of component `a`.
///
/// Normal fluxes live at cell centers. Cross fluxes live on nodes/edges;
/// on a no-slip wall the tangential derivative is one-sided against the
/// wall value (equivalently a reflected ghost `2 u_wall - u_in`), on a
/// free-slip wall the cross flux vanishes.
#[inline]
pub fn viscous_at<U: FaceAccess>(
    vp: &ViscousParts,
    walls: Option<&TangentialWalls>,
    u: &U,
    a: usize,
    f: [usize; 3],
) -> f64 {
    let g = vp.grid;
    let inv_h = 1.0 / g.h();
    let (normal_factor, cross) = match vp.form {
        ViscousForm::Laplacian => (1.0, false),
        ViscousForm::Stress | ViscousForm::StressBulk => (2.0, true),
    };
    let bulk = vp.form == ViscousForm::StressBulk;
    let na = g.n(a);

    let normal_flux = |cell: [usize; 3]| -> f64 {
        let hi_face = if g.periodic(a) { wrap_inc(cell[a], na) } else { cell[a] + 1 };
        let grad_a = (u.at(a, shifted(cell, a, hi_face)) - u.at(a, cell)) * inv_h;
        let mut tau = normal_factor * vp.mu_cell.get(cell) * grad_a;
        if bulk {
            let coef = vp.gamma_cell.get(cell) - 2.0 / 3.0 * vp.mu_cell.get(cell);
            let mut d = 0.0;
            for c in 0..g.dim() {
                let hi = if g.periodic(c) { wrap_inc(cell[c], g.n(c)) } else { cell[c] + 1 };
                d += (u.at(c, shifted(cell, c, hi)) - u.at(c, cell)) * inv_h;
            }
            tau += coef * d;
        }
        tau
    };
    let cell_hi = f;
    let cell_lo = shifted(f, a, wrap_dec(f[a], na));
    let mut out = (normal_flux(cell_hi) - normal_flux(cell_lo)) * inv_h;

    for b in 0..g.dim() {
        if b == a {
            continue;
        }
        let nb = g.n(b);
        let g_lo = f[b];
        let g_hi = if g.periodic(b) { wrap_inc(f[b], nb) } else { f[b] + 1 };
        let t_hi = edge_flux(vp, walls, u, a, b, shifted(f, b, g_hi), cross, inv_h);
        let t_lo = edge_flux(vp, walls, u, a, b, shifted(f, b, g_lo), cross, inv_h);
        out += (t_hi - t_lo) * inv_h;
    }
    out
}

/// Flux of component `a` momentum across the `b` direction at the
/// node/edge `e` (`e[a]`, `e[b]` are node indices).
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn edge_flux<U: FaceAccess>(
    vp: &ViscousParts,
    walls: Option<&TangentialWalls>,
    u: &U,
    a: usize,
    b: usize,
    e: [usize; 3],
    cross: bool,
    inv_h: f64,
) -> f64 {
    let g = vp.grid;
    let d_b_ua = match one_sided(g, walls, u, a, b, e, inv_h) {
        WallDerivative::FreeSlip => return 0.0,
        WallDerivative::Value(v) => v,
        WallDerivative::Interior => {
            let lo = wrap_dec(e[b], g.n(b));
            (u.at(a, e) - u.at(a, shifted(e, b, lo))) * inv_h
        }
    };
    let mut t = d_b_ua;
    if cross {
        let d_a_ub = match one_sided(g, walls, u, b, a, e, inv_h) {
            WallDerivative::FreeSlip => return 0.0,
            WallDerivative::Value(v) => v,
            WallDerivative::Interior => {
                let lo = wrap_dec(e[a], g.n(a));
                (u.at(b, e) - u.at(b, shifted(e, a, lo))) * inv_h
            }
        };
        t += d_a_ub;
    }
    vp.mu_node_edge.get(a, b, e) * t
}

enum WallDerivative {
    Interior,
    FreeSlip,
    Value(f64),
}

/// Derivative of component `a` along `b` at node `e`, if `e` lies on a wall
/// normal to `b`.
#[inline(always)]
fn one_sided<U: FaceAccess>(
    g: &GridSpec,
    walls: Option<&TangentialWalls>,
    u: &U,
    a: usize,
    b: usize,
    e: [usize; 3],
    inv_h: f64,
) -> WallDerivative {
    if !g.wall(b) {
        return WallDerivative::Interior;
    }
    let nb = g.n(b);
    let side = if e[b] == 0 {
        LO
    } else if e[b] == nb {
        HI
    } else {
        return WallDerivative::Interior;
    };
    if g.bc(b, side) == BoundaryCondition::FreeSlip {
        return WallDerivative::FreeSlip;
    }
    let w = walls.map_or(0.0, |w| w.get(b, side, a, e));
    if side == LO {
        WallDerivative::Value(2.0 * (u.at(a, e) - w) * inv_h)
    } else {
        WallDerivative::Value(2.0 * (w - u.at(a, shifted(e, b, nb - 1))) * inv_h)
    }
}

/// Viscous operator `L_mu u` on unknown faces (boundary faces of the result are zero).
pub fn apply_viscous(u: &FaceField, coeff: &CoefficientSet) -> Result<FaceField> {
    apply_viscous_with_walls(u, coeff, None)
}

/// Affine viscous operator using stored boundary normals and the given
/// tangential wall velocities.
pub fn apply_viscous_with_walls(
    u: &FaceField,
    coeff: &CoefficientSet,
    walls: Option<&TangentialWalls>,
) -> Result<FaceField> {
    let g = *u.grid();
    check_coeff(&g, coeff)?;
    let vp = ViscousParts::of(coeff);
    Ok(FaceField::from_unknown_fn(&g, |a, idx| viscous_at(&vp, walls, u, a, idx)))
}

fn check_coeff(g: &GridSpec, coeff: &CoefficientSet) -> Result<()> {
    if coeff.grid() != g {
        return Err(StokesError::LayoutMismatch("field and coefficient grids differ".into()));
    }
    Ok(())
}

/// `A u = theta rho_face u - L_mu u`.
pub fn apply_a(u: &FaceField, coeff: &CoefficientSet) -> Result<FaceField> {
    apply_a_with_walls(u, coeff, None)
}

fn apply_a_with_walls(
    u: &FaceField,
    coeff: &CoefficientSet,
    walls: Option<&TangentialWalls>,
) -> Result<FaceField> {
    let g = *u.grid();
    check_coeff(&g, coeff)?;
    let vp = ViscousParts::of(coeff);
    let theta = coeff.theta;
    Ok(FaceField::from_unknown_fn(&g, |a, idx| {
        let inertia = if theta != 0.0 { theta * coeff.rho_face.get(a, idx) * u.get(a, idx) } else { 0.0 };
        inertia - viscous_at(&vp, walls, u, a, idx)
    }))
}

/// Saddle-point operator `(A u + G p, -D u)`.
pub fn apply_m(x: &StokesVector, coeff: &CoefficientSet) -> Result<StokesVector> {
    apply_m_with_walls(x, coeff, None)
}

fn apply_m_with_walls(
    x: &StokesVector,
    coeff: &CoefficientSet,
    walls: Option<&TangentialWalls>,
) -> Result<StokesVector> {
    let mut u = apply_a_with_walls(&x.u, coeff, walls)?;
    u.axpy(1.0, &grad(&x.p))?;
    let mut p = div(&x.u);
    p.scale(-1.0);
    StokesVector::new(u, p)
}

/// Constant modes of `M`: the pressure constant always (no boundary fixes
/// the pressure level) and, in steady flow, constant velocity components
/// whose axis is periodic while every other axis is periodic or free-slip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NullSpace {
    pub pressure: bool,
    pub velocity_components: Vec<usize>,
}

impl NullSpace {
    pub fn of(coeff: &CoefficientSet) -> Self {
        let g = coeff.grid();
        let velocity_components = if coeff.theta == 0.0 {
            (0..g.dim())
                .filter(|&a| {
                    g.periodic(a)
                        && (0..g.dim()).all(|b| {
                            b == a || g.periodic(b) || (g.bc(b, LO) == BoundaryCondition::FreeSlip && g.bc(b, HI) == BoundaryCondition::FreeSlip)
                        })
                })
                .collect()
        } else {
            Vec::new()
        };
        Self { pressure: true, velocity_components }
    }

    pub fn project_velocity(&self, u: &mut FaceField) {
        for &a in &self.velocity_components {
            u.subtract_component_mean(a);
        }
    }

    pub fn project_pressure(&self, p: &mut CellField) {
        if self.pressure {
            p.subtract_mean();
        }
    }

    pub fn project(&self, x: &mut StokesVector) {
        self.project_velocity(&mut x.u);
        self.project_pressure(&mut x.p);
    }
}

/// Prescribed wall velocities: normal components on the held boundary
/// faces, tangential components on each wall.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryValues {
    pub normal: FaceField,
    pub tangential: TangentialWalls,
}

impl BoundaryValues {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self { normal: FaceField::zeros(grid), tangential: TangentialWalls::zeros(grid) }
    }

    /// Samples a wall velocity `f(x) -> (u, v[, w])` on every wall. Normal
    /// values are taken on both wall kinds; tangential values only on
    /// no-slip walls (free-slip walls ignore them).
    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let g = *grid;
        let normal = FaceField::from_fn(&g, |a, idx| {
            if g.is_boundary_face(a, idx) {
                f(g.face_center(a, idx))[a]
            } else {
                0.0
            }
        });
        let mut tangential = TangentialWalls::zeros(&g);
        for b in 0..g.dim() {
            if !g.wall(b) {
                continue;
            }
            for side in [LO, HI] {
                if g.bc(b, side) != BoundaryCondition::NoSlip {
                    continue;
                }
                for a in 0..g.dim() {
                    if a == b {
                        continue;
                    }
                    tangential.set_from_fn(b, side, a, |idx| {
                        let mut x = g.face_center(a, idx);
                        x[b] = if side == LO { 0.0 } else { g.domain_length(b) };
                        f(x)[a]
                    });
                }
            }
        }
        Self { normal, tangential }
    }

    /// Interior field `x` with the held boundary faces replaced by the prescribed normals.
    pub fn attach(&self, x: &StokesVector) -> StokesVector {
        let g = *x.grid();
        let mut out = x.clone();
        out.u = FaceField::from_fn(&g, |a, idx| {
            if g.is_boundary_face(a, idx) {
                self.normal.get(a, idx)
            } else {
                x.u.get(a, idx)
            }
        });
        out
    }
}

/// The full affine operator on `x` with boundary data `bvals`.
pub fn apply_m_affine(
    x: &StokesVector,
    coeff: &CoefficientSet,
    bvals: &BoundaryValues,
) -> Result<StokesVector> {
    apply_m_with_walls(&bvals.attach(x), coeff, Some(&bvals.tangential))
}

/// Subtracts the boundary contribution from `rhs`, so the remaining solve
/// is linear with homogeneous walls. Adding `bvals` back to its solution
/// solves the original problem.
pub fn homogenize(
    bvals: &BoundaryValues,
    coeff: &CoefficientSet,
    rhs: &StokesVector,
) -> Result<StokesVector> {
    let g = *rhs.grid();
    check_coeff(&g, coeff)?;
    let zero = StokesVector::zeros(&g);
    let boundary_part = apply_m_affine(&zero, coeff, bvals)?;

    // Net outflow through the walls must match the divergence source g = -rhs.p.
    let vol = g.h().powi(g.dim() as i32);
    let flux: f64 = div(&bvals.attach(&zero).u).data().iter().sum::<f64>() * vol;
    let source: f64 = -rhs.p.data().iter().sum::<f64>() * vol;
    let scale = boundary_flux_scale(&g, bvals) + rhs.p.data().iter().map(|v| v.abs()).sum::<f64>() * vol;
    if (flux - source).abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(StokesError::IncompatibleBoundary { flux, expected: source });
    }

    let mut out = rhs.clone();
    out.axpy(-1.0, &boundary_part)?;
    out.u.zero_boundary();
    Ok(out)
}

fn boundary_flux_scale(g: &GridSpec, bvals: &BoundaryValues) -> f64 {
    let area = g.h().powi(g.dim() as i32 - 1);
    bvals.normal.max_abs() * area * (0..g.dim()).map(|a| g.face_len(a)).sum::<usize>() as f64
}

/// Velocity-equation scale factor `c`: the system becomes
/// `[c A, G; -D, 0] (u, c p) = (c b_u, b_p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleSpec {
    pub c: f64,
}

impl RescaleSpec {
    /// Maps a solution of the rescaled system back to original unknowns.
    pub fn unscale_solution(&self, x: &StokesVector) -> StokesVector {
        let mut out = x.clone();
        out.p.scale(1.0 / self.c);
        out
    }

    pub fn scale_solution(&self, x: &StokesVector) -> StokesVector {
        let mut out = x.clone();
        out.p.scale(self.c);
        out
    }
}

/// Rescales with `c = h / mu0`, `mu0` the largest cell viscosity
/// (`c = 1` for inviscid coefficients).
pub fn rescale(coeff: &CoefficientSet, rhs: &StokesVector) -> (CoefficientSet, StokesVector, RescaleSpec) {
    let mu0 = coeff.mu_max();
    let c = if mu0 > 0.0 { coeff.grid().h() / mu0 } else { 1.0 };
    let spec = RescaleSpec { c };
    if c == 1.0 {
        return (coeff.clone(), rhs.clone(), spec);
    }
    let mut b = rhs.clone();
    b.u.scale(c);
    (coeff.scaled_velocity_operator(c), b, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryCondition::*;

    fn constant_coeff(g: &GridSpec, theta: f64, rho: f64, mu: f64, form: ViscousForm) -> CoefficientSet {
        CoefficientSet::new(theta, CellField::constant(g, rho), CellField::constant(g, mu), None, form).unwrap()
    }

    #[test]
    fn divergence_stencil_arithmetic() {
        let g = GridSpec::uniform(2, 4, 0.5, NoSlip).unwrap();
        let mut u = FaceField::zeros(&g);
        u.set(0, [1, 1, 0], 1.0);
        u.set(0, [2, 1, 0], 3.0);
        u.set(1, [1, 1, 0], 2.0);
        u.set(1, [1, 2, 0], 2.0);
        assert_eq!(div(&u).get([1, 1, 0]), 4.0);
        let c = FaceField::from_fn(&GridSpec::uniform(2, 4, 1.0, Periodic).unwrap(), |_, _| 2.5);
        assert!(div(&c).norm2() == 0.0);
    }

    #[test]
    fn gradient_stencil_arithmetic() {
        let g = GridSpec::uniform(2, 4, 1.0, NoSlip).unwrap();
        let mut p = CellField::zeros(&g);
        p.set([0, 2, 0], 2.0);
        p.set([1, 2, 0], 5.0);
        assert_eq!(grad(&p).get(0, [1, 2, 0]), 3.0);
        assert_eq!(grad(&CellField::constant(&g, 7.0)).max_abs(), 0.0);
    }

    #[test]
    fn periodic_two_cell_gradient_wraps() {
        // Two cells along x; the y axis is inert (constant rows).
        let g = GridSpec::new(2, &[4, 4], 1.0, &[[Periodic; 2], [Periodic; 2]]).unwrap();
        let p = CellField::from_fn(&g, |i| (i[0] % 2) as f64);
        let gp = grad(&p);
        assert_eq!(gp.get(0, [0, 0, 0]), -1.0);
        assert_eq!(gp.get(0, [1, 0, 0]), 1.0);
    }

    #[test]
    fn laplacian_point_stencil() {
        let g = GridSpec::uniform(2, 8, 1.0, NoSlip).unwrap();
        let mut p = CellField::zeros(&g);
        p.set([3, 3, 0], 1.0);
        assert_eq!(lap_pressure(&p).get([3, 3, 0]), -4.0);
        assert_eq!(lap_pressure(&CellField::constant(&g, 2.0)).norm2(), 0.0);
    }

    #[test]
    fn lrho_constant_density_reduces_to_laplacian() {
        let g = GridSpec::uniform(2, 8, 1.0, NoSlip).unwrap();
        let c = constant_coeff(&g, 1.0, 2.0, 1.0, ViscousForm::Stress);
        let p = CellField::from_fn(&g, |i| (i[0] * i[0] + 3 * i[1]) as f64);
        let mut expect = lap_pressure(&p);
        expect.scale(0.5);
        let got = apply_lrho(&p, &c).unwrap();
        for (x, y) in got.data().iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn lrho_two_cell_periodic_enumeration() {
        // Alternating density columns give face densities {2, 4} along x.
        // The flux through the x-face between the cells is weighted by 1/2
        // and the wrap-around face by 1/4: D(rho^-1 G p) = {-0.75, +0.75}.
        let g = GridSpec::new(2, &[4, 4], 1.0, &[[Periodic; 2], [Periodic; 2]]).unwrap();
        let rho_cell = CellField::constant(&g, 1.0);
        let mut c = CoefficientSet::new(1.0, rho_cell, CellField::zeros(&g), None, ViscousForm::Stress).unwrap();
        // Period-2 pattern in x: faces at even x-index have density 4, odd 2.
        c.rho_face = FaceField::from_fn(&g, |a, i| if a == 0 { if i[0] % 2 == 0 { 4.0 } else { 2.0 } } else { 1.0 });
        let p = CellField::from_fn(&g, |i| (i[0] % 2) as f64);
        let l = apply_lrho(&p, &c).unwrap();
        // Cell 0 (p=0): faces 0 (rho 4, lo) and 1 (rho 2, hi).
        assert!((l.get([0, 0, 0]) - 0.75).abs() < 1e-15);
        assert!((l.get([1, 0, 0]) + 0.75).abs() < 1e-15);
        let mut bad = c.clone();
        bad.rho_face.set(0, [1, 0, 0], 0.0);
        assert!(apply_lrho(&p, &bad).is_err());
    }

    #[test]
    fn face_and_node_averaging() {
        let g = GridSpec::uniform(2, 4, 1.0, NoSlip).unwrap();
        let rho = CellField::from_fn(&g, |i| (1 + i[0] + 4 * i[1]) as f64);
        let f = average_to_faces(&rho);
        assert_eq!(f.get(0, [1, 0, 0]), 0.5 * (1.0 + 2.0));
        assert_eq!(f.get(0, [0, 0, 0]), 1.0);
        let n = average_to_nodes_edges(&rho);
        assert_eq!(n.get(0, 1, [1, 1, 0]), (1.0 + 2.0 + 5.0 + 6.0) / 4.0);
        assert_eq!(n.get(0, 1, [0, 0, 0]), 1.0);
        assert_eq!(n.get(0, 1, [2, 0, 0]), 2.5);
    }

    #[test]
    fn a_examples() {
        let g = GridSpec::uniform(2, 8, 1.0, NoSlip).unwrap();
        let inviscid = CoefficientSet::new(1.0, CellField::constant(&g, 2.0), CellField::zeros(&g), None, ViscousForm::Stress).unwrap();
        let u = FaceField::from_unknown_fn(&g, |a, i| (a + i[0] * 2 + i[1]) as f64);
        let au = apply_a(&u, &inviscid).unwrap();
        let mut two_u = u.clone();
        two_u.scale(2.0);
        assert_eq!(au, two_u);

        let steady = constant_coeff(&g, 0.0, 1.0, 1.5, ViscousForm::Stress);
        let mut neg = apply_viscous(&u, &steady).unwrap();
        neg.scale(-1.0);
        assert_eq!(apply_a(&u, &steady).unwrap(), neg);

        let gp = GridSpec::uniform(2, 8, 1.0, Periodic).unwrap();
        let c = constant_coeff(&gp, 3.0, 2.0, 1.0, ViscousForm::StressBulk);
        let ones = FaceField::from_fn(&gp, |_, _| 1.0);
        let r = apply_a(&ones, &c).unwrap();
        assert!(r.comp(0).iter().chain(r.comp(1)).all(|&v| (v - 6.0).abs() < 1e-14));
    }

    #[test]
    fn m_of_constants_periodic() {
        let g = GridSpec::uniform(2, 8, 1.0, Periodic).unwrap();
        let c = constant_coeff(&g, 2.0, 1.5, 1.0, ViscousForm::Stress);
        let x = StokesVector::new(FaceField::from_fn(&g, |a, _| 1.0 + a as f64), CellField::constant(&g, 4.0)).unwrap();
        let mx = apply_m(&x, &c).unwrap();
        assert!(mx.p.norm2() < 1e-14);
        assert!(mx.u.comp(0).iter().all(|&v| (v - 3.0).abs() < 1e-14));
        assert!(mx.u.comp(1).iter().all(|&v| (v - 6.0).abs() < 1e-14));
        assert_eq!(apply_m(&StokesVector::zeros(&g), &c).unwrap().norm2(), 0.0);
    }

    #[test]
    fn homogenize_zero_boundary_is_identity() {
        let g = GridSpec::uniform(2, 8, 1.0, NoSlip).unwrap();
        let c = constant_coeff(&g, 0.0, 1.0, 1.0, ViscousForm::Stress);
        let rhs = StokesVector::new(
            FaceField::from_unknown_fn(&g, |a, i| (a + i[0] + i[1]) as f64),
            CellField::zeros(&g),
        )
        .unwrap();
        let out = homogenize(&BoundaryValues::zeros(&g), &c, &rhs).unwrap();
        assert_eq!(out, rhs);
    }

    #[test]
    fn homogenize_rejects_net_inflow() {
        let g = GridSpec::uniform(2, 8, 1.0, NoSlip).unwrap();
        let c = constant_coeff(&g, 0.0, 1.0, 1.0, ViscousForm::Stress);
        let inflow = BoundaryValues::from_fn(&g, |_| [1.0, 0.0, 0.0]);
        // Uniform u = 1 enters on the west and leaves on the east: compatible.
        assert!(homogenize(&inflow, &c, &StokesVector::zeros(&g)).is_ok());
        let net = BoundaryValues::from_fn(&g, |x| [if x[0] == 0.0 { 1.0 } else { 0.0 }, 0.0, 0.0]);
        assert!(matches!(
            homogenize(&net, &c, &StokesVector::zeros(&g)),
            Err(StokesError::IncompatibleBoundary { .. })
        ));
    }

    #[test]
    fn rescale_round_trip() {
        let g = GridSpec::uniform(2, 8, 1.0, NoSlip).unwrap();
        let unit = constant_coeff(&g, 0.0, 1.0, 1.0, ViscousForm::Stress);
        let rhs = StokesVector::new(FaceField::from_unknown_fn(&g, |_, i| i[0] as f64), CellField::constant(&g, 1.0)).unwrap();
        let (_, b, spec) = rescale(&unit, &rhs);
        assert_eq!(spec.c, 1.0);
        assert_eq!(b, rhs);

        let viscous = constant_coeff(&g, 0.0, 1.0, 100.0, ViscousForm::Stress);
        let (c2, b2, spec) = rescale(&viscous, &rhs);
        assert!((spec.c - 0.01).abs() < 1e-18);
        assert!((c2.mu_cell.max() - 1.0).abs() < 1e-15);
        assert!((b2.u.get(0, [3, 2, 0]) - 0.03).abs() < 1e-15);
        let x = StokesVector::new(FaceField::from_unknown_fn(&g, |_, i| i[1] as f64 + 0.3), CellField::constant(&g, 0.7)).unwrap();
        let back = spec.unscale_solution(&spec.scale_solution(&x));
        for (p, q) in back.to_unknowns().iter().zip(x.to_unknowns()) {
            assert!((p - q).abs() <= 1e-15 * q.abs().max(1.0));
        }
    }
}
