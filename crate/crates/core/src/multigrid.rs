//! Geometric multigrid: a cell-centered solver for `D beta G` (pressure,
//! `beta = 1/rho`) and a staggered solver for `A = alpha - L_mu` (velocity).
//!
//! Both use multicolored Gauss-Seidel, coarsened coefficients rather than
//! Galerkin products, and V-cycles in residual-correction form with a
//! fixed number of relaxations, so a cycle is a constant linear operator.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StokesError};
use crate::grid::{for_each_index, linear, BoundaryCondition, CellField, FaceField, GridSpec, NodeEdgeField, HI, LO};
use crate::operators::{apply_a, viscous_at, CoefficientSet, Impulse, ViscousParts};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherParams {
    pub omega: f64,
    pub sweeps_down: usize,
    pub sweeps_up: usize,
    pub bottom_sweeps: usize,
}

impl Default for SmootherParams {
    fn default() -> Self {
        Self { omega: 1.0, sweeps_down: 2, sweeps_up: 2, bottom_sweeps: 8 }
    }
}

impl SmootherParams {
    /// Symmetric smoothing with `sweeps` relaxations going down and up.
    pub fn with_sweeps(sweeps: usize) -> Self {
        Self { sweeps_down: sweeps, sweeps_up: sweeps, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(StokesError::InvalidParameter(format!("omega {} outside (0, 1]", self.omega)));
        }
        if self.sweeps_down == 0 || self.sweeps_up == 0 {
            return Err(StokesError::InvalidParameter("smoothing sweeps must be at least 1".into()));
        }
        if self.bottom_sweeps < 8 {
            return Err(StokesError::InvalidParameter("bottom_sweeps must be at least 8".into()));
        }
        Ok(())
    }
}

/// One level of a hierarchy.
#[derive(Debug, Clone)]
pub struct MgLevel {
    pub coeff: CoefficientSet,
    /// Face coefficient of the pressure operator; absent when the density
    /// is not positive everywhere.
    pub beta: Option<FaceField>,
    cell_diag: Option<CellField>,
    face_diag: FaceField,
}

impl MgLevel {
    fn new(coeff: CoefficientSet, beta: Option<FaceField>) -> Self {
        let cell_diag = beta.as_ref().map(cell_diagonal);
        let face_diag = face_diagonal(&coeff);
        Self { coeff, beta, cell_diag, face_diag }
    }

    pub fn grid(&self) -> &GridSpec {
        self.coeff.grid()
    }

    fn beta(&self) -> Result<&FaceField> {
        self.beta
            .as_ref()
            .ok_or_else(|| StokesError::InvalidCoefficients("pressure multigrid needs positive density".into()))
    }
}

/// Levels from finest to coarsest, coarsening by 2 while every axis stays
/// even with at least two cells.
#[derive(Debug, Clone)]
pub struct MgHierarchy {
    levels: Vec<MgLevel>,
}

impl MgHierarchy {
    pub fn build(coeff: &CoefficientSet) -> Result<Self> {
        let beta = if coeff.rho_face.comps_all_positive() {
            let mut b = coeff.rho_face.clone();
            b.map_inplace(|v| 1.0 / v);
            Some(b)
        } else {
            None
        };
        let mut levels = vec![MgLevel::new(coeff.clone(), beta)];
        loop {
            let fine = levels.last().expect("nonempty");
            let Some(cg) = fine.grid().coarsen() else { break };
            let coeff = coarsen_coefficients(&fine.coeff)?;
            let beta = fine.beta.as_ref().map(|b| coarsen_faces(b, &cg));
            levels.push(MgLevel::new(coeff, beta));
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[MgLevel] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn finest(&self) -> &MgLevel {
        &self.levels[0]
    }
}

fn check_even(g: &GridSpec) -> Result<GridSpec> {
    g.coarsen()
        .ok_or_else(|| StokesError::InvalidGrid("grid cannot be coarsened by two".into()))
}

/// Coarse face values as the mean of the coincident fine faces.
pub fn coarsen_faces(fine: &FaceField, coarse: &GridSpec) -> FaceField {
    let d = coarse.dim();
    FaceField::from_fn(coarse, |a, idx| {
        let mut sum = 0.0;
        let mut count = 0.0;
        for_each_child(d, a, |delta| {
            let mut f = [0; 3];
            for b in 0..3 {
                f[b] = if b == a { 2 * idx[b] } else { 2 * idx[b] + delta[b] };
            }
            sum += fine.get(a, f);
            count += 1.0;
        });
        sum / count
    })
}

/// Visits the child offsets in {0,1} on every axis except `skip`.
fn for_each_child(dim: usize, skip: usize, f: impl FnMut([usize; 3])) {
    let r = |b: usize| if b < dim && b != skip { 0..2 } else { 0..1 };
    for_each_index(&[r(0), r(1), r(2)], f);
}

fn coarsen_cells(fine: &CellField, coarse: &GridSpec) -> CellField {
    let d = coarse.dim();
    let w = 1.0 / (1usize << d) as f64;
    CellField::from_fn(coarse, |idx| {
        let mut s = 0.0;
        for_each_child(d, 3, |delta| {
            s += fine.get([2 * idx[0] + delta[0], 2 * idx[1] + delta[1], 2 * idx[2] + delta[2]]);
        });
        s * w
    })
}

/// Coefficients on the next coarser grid: cell and face values by averaging,
/// 2D node viscosity by injection, 3D edge viscosity by averaging the two
/// fine edges along the edge direction.
pub fn coarsen_coefficients(fine: &CoefficientSet) -> Result<CoefficientSet> {
    let cg = check_even(fine.grid())?;
    let d = cg.dim();
    let mu_node_edge = NodeEdgeField::from_fn(&cg, |a, b, idx| {
        let mut f = [2 * idx[0], 2 * idx[1], 2 * idx[2]];
        if d == 2 {
            fine.mu_node_edge.get(a, b, f)
        } else {
            let c = 3 - a - b;
            let lo = fine.mu_node_edge.get(a, b, f);
            f[c] += 1;
            0.5 * (lo + fine.mu_node_edge.get(a, b, f))
        }
    });
    Ok(CoefficientSet {
        theta: fine.theta,
        rho_cell: coarsen_cells(&fine.rho_cell, &cg),
        rho_face: coarsen_faces(&fine.rho_face, &cg),
        mu_cell: coarsen_cells(&fine.mu_cell, &cg),
        mu_node_edge,
        gamma_cell: coarsen_cells(&fine.gamma_cell, &cg),
        viscous_form: fine.viscous_form,
    })
}

/// Mean of the `2^d` fine children.
pub fn restrict_cell(fine: &CellField) -> Result<CellField> {
    let cg = check_even(fine.grid())?;
    Ok(coarsen_cells(fine, &cg))
}

/// Full-weighting face restriction: weights 1/4, 1/2, 1/4 along the face
/// normal, averaged over the transverse children.
pub fn restrict_face(fine: &FaceField) -> Result<FaceField> {
    let fg = *fine.grid();
    let cg = check_even(&fg)?;
    let d = cg.dim();
    let tw = 1.0 / (1usize << (d - 1)) as f64;
    Ok(FaceField::from_unknown_fn(&cg, |a, idx| {
        let nf = fg.n(a);
        let mid = 2 * idx[a];
        let lo = if mid == 0 { nf - 1 } else { mid - 1 };
        let hi = mid + 1;
        let mut s = 0.0;
        for_each_child(d, a, |delta| {
            let mut f = [0; 3];
            for b in 0..3 {
                f[b] = 2 * idx[b] + delta[b];
            }
            let at = |i: usize| fine.get(a, with(f, a, i));
            s += 0.25 * at(lo) + 0.5 * at(mid) + 0.25 * at(hi);
        });
        s * tw
    }))
}

#[inline(always)]
fn with(mut idx: [usize; 3], axis: usize, v: usize) -> [usize; 3] {
    idx[axis] = v;
    idx
}

/// Injection of each coarse cell into its `2^d` children.
pub fn prolong_cell(coarse: &CellField, fine: &GridSpec) -> CellField {
    CellField::from_fn(fine, |idx| coarse.get([idx[0] / 2, idx[1] / 2, idx[2] / 2]))
}

/// Face prolongation: linear along the face normal (fine faces on coarse
/// faces copy, the others average two), and 3/4, 1/4 across each
/// transverse axis. Beyond a wall the ghost value is `-c` for no-slip and
/// `+c` for free-slip.
pub fn prolong_face(coarse: &FaceField, fine: &GridSpec) -> FaceField {
    let cg = *coarse.grid();
    let d = fine.dim();
    FaceField::from_unknown_fn(fine, |a, idx| {
        let nca = cg.n(a);
        let ia = idx[a] / 2;
        let normal: [(usize, f64); 2] = if idx[a] % 2 == 0 {
            [(ia, 1.0), (ia, 0.0)]
        } else {
            let next = if cg.periodic(a) && ia + 1 == nca { 0 } else { ia + 1 };
            [(ia, 0.5), (next, 0.5)]
        };
        // Transverse stencils: up to two (index, weight) pairs per axis.
        let mut trans = [[(0usize, 1.0f64), (0usize, 0.0f64)]; 3];
        for b in 0..3 {
            if b == a || b >= d {
                trans[b] = [(0, 1.0), (0, 0.0)];
                continue;
            }
            let j = idx[b];
            let jc = j / 2;
            let ncb = cg.n(b);
            let nb = if j % 2 == 0 { jc.checked_sub(1) } else { Some(jc + 1).filter(|&v| v < ncb) };
            trans[b] = match nb {
                Some(v) => [(jc, 0.75), (v, 0.25)],
                None if cg.periodic(b) => [(jc, 0.75), (if j % 2 == 0 { ncb - 1 } else { 0 }, 0.25)],
                None => {
                    let side = if j % 2 == 0 { LO } else { HI };
                    let ghost = if cg.bc(b, side) == BoundaryCondition::NoSlip { -0.25 } else { 0.25 };
                    [(jc, 0.75 + ghost), (jc, 0.0)]
                }
            };
        }
        let mut s = 0.0;
        for &(na, wa) in &normal {
            if wa == 0.0 {
                continue;
            }
            for &(i1, w1) in &trans[(a + 1) % 3] {
                if w1 == 0.0 {
                    continue;
                }
                for &(i2, w2) in &trans[(a + 2) % 3] {
                    if w2 == 0.0 {
                        continue;
                    }
                    let mut c = [0; 3];
                    c[a] = na;
                    c[(a + 1) % 3] = i1;
                    c[(a + 2) % 3] = i2;
                    s += wa * w1 * w2 * coarse.get(a, c);
                }
            }
        }
        s
    })
}

/// `D beta G p` with zero flux through walls.
pub fn apply_cell_operator(beta: &FaceField, p: &CellField) -> CellField {
    let g = *p.grid();
    let inv_h2 = 1.0 / (g.h() * g.h());
    CellField::from_fn(&g, |idx| cell_op_at(&g, beta, p, idx, inv_h2))
}

#[inline(always)]
fn cell_op_at(g: &GridSpec, beta: &FaceField, p: &CellField, idx: [usize; 3], inv_h2: f64) -> f64 {
    let pc = p.get(idx);
    let mut s = 0.0;
    for a in 0..g.dim() {
        let n = g.n(a);
        let i = idx[a];
        if g.periodic(a) {
            let lo = if i == 0 { n - 1 } else { i - 1 };
            let hi = if i + 1 == n { 0 } else { i + 1 };
            s += beta.get(a, with(idx, a, hi)) * (p.get(with(idx, a, hi)) - pc)
                - beta.get(a, idx) * (pc - p.get(with(idx, a, lo)));
        } else {
            if i + 1 < n {
                s += beta.get(a, with(idx, a, i + 1)) * (p.get(with(idx, a, i + 1)) - pc);
            }
            if i > 0 {
                s -= beta.get(a, idx) * (pc - p.get(with(idx, a, i - 1)));
            }
        }
    }
    s * inv_h2
}

fn cell_diagonal(beta: &FaceField) -> CellField {
    let g = *beta.grid();
    let inv_h2 = 1.0 / (g.h() * g.h());
    CellField::from_fn(&g, |idx| {
        let mut s = 0.0;
        for a in 0..g.dim() {
            let n = g.n(a);
            let i = idx[a];
            let hi = if g.periodic(a) { Some(if i + 1 == n { 0 } else { i + 1 }) } else { (i + 1 < n).then_some(i + 1) };
            let lo_wall = g.wall(a) && i == 0;
            if let Some(hi) = hi {
                s -= beta.get(a, with(idx, a, hi));
            }
            if !lo_wall {
                s -= beta.get(a, idx);
            }
        }
        s * inv_h2
    })
}

fn face_diagonal(coeff: &CoefficientSet) -> FaceField {
    let g = *coeff.grid();
    let vp = ViscousParts::of(coeff);
    FaceField::from_unknown_fn(&g, |a, idx| {
        coeff.theta * coeff.rho_face.get(a, idx) - viscous_at(&vp, None, &Impulse { comp: a, idx }, a, idx)
    })
}

/// One red-black Gauss-Seidel sweep on `D beta G x = rhs`.
pub fn smooth_cell(x: &mut CellField, rhs: &CellField, level: &MgLevel, omega: f64) -> Result<()> {
    let g = *level.grid();
    let beta = level.beta()?;
    let diag = level.cell_diag.as_ref().expect("diagonal built with beta");
    let inv_h2 = 1.0 / (g.h() * g.h());
    let shape = g.cell_shape();
    let mut zero = false;
    for color in 0..2 {
        for_each_index(&[0..shape[0], 0..shape[1], 0..shape[2]], |idx| {
            if (idx[0] + idx[1] + idx[2]) % 2 != color {
                return;
            }
            let dg = diag.get(idx);
            if dg == 0.0 {
                zero = true;
                return;
            }
            let r = rhs.get(idx) - cell_op_at(&g, beta, x, idx, inv_h2);
            let l = linear(shape, idx);
            x.data_mut()[l] += omega * r / dg;
        });
    }
    if zero {
        return Err(StokesError::ZeroDiagonal("pressure"));
    }
    Ok(())
}

/// One sweep over the `2d` colors red-x, black-x, red-y, ... on `A x = rhs`.
pub fn smooth_face(x: &mut FaceField, rhs: &FaceField, level: &MgLevel, omega: f64) -> Result<()> {
    let g = *level.grid();
    let coeff = &level.coeff;
    let vp = ViscousParts::of(coeff);
    let theta = coeff.theta;
    for a in 0..g.dim() {
        let shape = g.face_shape(a);
        let ranges = g.face_unknown_ranges(a);
        for color in 0..2 {
            let mut zero = false;
            for_each_index(&ranges, |idx| {
                if (idx[0] + idx[1] + idx[2]) % 2 != color {
                    return;
                }
                let l = linear(shape, idx);
                let dg = level.face_diag.comp(a)[l];
                if dg == 0.0 {
                    zero = true;
                    return;
                }
                let ax = theta * coeff.rho_face.comp(a)[l] * x.comp(a)[l] - viscous_at(&vp, None, &*x, a, idx);
                let r = rhs.comp(a)[l] - ax;
                x.comp_mut(a)[l] += omega * r / dg;
            });
            if zero {
                return Err(StokesError::ZeroDiagonal("velocity"));
            }
        }
    }
    Ok(())
}

/// Level operations shared by the two V-cycles.
trait MgSpace {
    type F: Clone;
    fn levels(&self) -> &[MgLevel];
    fn zeros(&self, l: usize) -> Self::F;
    fn smooth(&self, l: usize, x: &mut Self::F, r: &Self::F, omega: f64) -> Result<()>;
    fn residual(&self, l: usize, x: &Self::F, r: &Self::F) -> Result<Self::F>;
    fn restrict(&self, fine: &Self::F) -> Result<Self::F>;
    fn prolong_add(&self, l: usize, coarse: &Self::F, fine: &mut Self::F) -> Result<()>;
}

struct CellSpace<'a>(&'a MgHierarchy);
struct FaceSpace<'a>(&'a MgHierarchy);

impl MgSpace for CellSpace<'_> {
    type F = CellField;
    fn levels(&self) -> &[MgLevel] {
        &self.0.levels
    }
    fn zeros(&self, l: usize) -> CellField {
        CellField::zeros(self.0.levels[l].grid())
    }
    fn smooth(&self, l: usize, x: &mut CellField, r: &CellField, omega: f64) -> Result<()> {
        smooth_cell(x, r, &self.0.levels[l], omega)
    }
    fn residual(&self, l: usize, x: &CellField, r: &CellField) -> Result<CellField> {
        let mut out = r.clone();
        out.axpy(-1.0, &apply_cell_operator(self.0.levels[l].beta()?, x))?;
        Ok(out)
    }
    fn restrict(&self, fine: &CellField) -> Result<CellField> {
        restrict_cell(fine)
    }
    fn prolong_add(&self, l: usize, coarse: &CellField, fine: &mut CellField) -> Result<()> {
        fine.axpy(1.0, &prolong_cell(coarse, self.0.levels[l].grid()))
    }
}

impl MgSpace for FaceSpace<'_> {
    type F = FaceField;
    fn levels(&self) -> &[MgLevel] {
        &self.0.levels
    }
    fn zeros(&self, l: usize) -> FaceField {
        FaceField::zeros(self.0.levels[l].grid())
    }
    fn smooth(&self, l: usize, x: &mut FaceField, r: &FaceField, omega: f64) -> Result<()> {
        smooth_face(x, r, &self.0.levels[l], omega)
    }
    fn residual(&self, l: usize, x: &FaceField, r: &FaceField) -> Result<FaceField> {
        let mut out = r.clone();
        out.axpy(-1.0, &apply_a(x, &self.0.levels[l].coeff)?)?;
        out.zero_boundary();
        Ok(out)
    }
    fn restrict(&self, fine: &FaceField) -> Result<FaceField> {
        restrict_face(fine)
    }
    fn prolong_add(&self, l: usize, coarse: &FaceField, fine: &mut FaceField) -> Result<()> {
        fine.axpy(1.0, &prolong_face(coarse, self.0.levels[l].grid()))
    }
}

fn vcycle_from<S: MgSpace>(s: &S, l: usize, r: &S::F, params: &SmootherParams) -> Result<S::F> {
    let mut x = s.zeros(l);
    if l + 1 == s.levels().len() {
        for _ in 0..params.bottom_sweeps {
            s.smooth(l, &mut x, r, params.omega)?;
        }
        return Ok(x);
    }
    for _ in 0..params.sweeps_down {
        s.smooth(l, &mut x, r, params.omega)?;
    }
    let rc = s.restrict(&s.residual(l, &x, r)?)?;
    let xc = vcycle_from(s, l + 1, &rc, params)?;
    s.prolong_add(l, &xc, &mut x)?;
    for _ in 0..params.sweeps_up {
        s.smooth(l, &mut x, r, params.omega)?;
    }
    Ok(x)
}

fn solve<S: MgSpace>(
    s: &S,
    rhs: &S::F,
    params: &SmootherParams,
    n_cycles: usize,
    mut on_cycle: impl FnMut(&S::F) -> Result<()>,
    axpy: impl Fn(&mut S::F, &S::F) -> Result<()>,
) -> Result<S::F> {
    params.validate()?;
    if n_cycles == 0 {
        return Err(StokesError::InvalidParameter("at least one V-cycle is required".into()));
    }
    let mut x = vcycle_from(s, 0, rhs, params)?;
    on_cycle(&x)?;
    for _ in 1..n_cycles {
        let r = s.residual(0, &x, rhs)?;
        let dx = vcycle_from(s, 0, &r, params)?;
        axpy(&mut x, &dx)?;
        on_cycle(&x)?;
    }
    Ok(x)
}

/// One pressure V-cycle from a zero guess.
pub fn vcycle_cell(rhs: &CellField, h: &MgHierarchy, params: &SmootherParams) -> Result<CellField> {
    check_grid(rhs.grid(), h)?;
    vcycle_from(&CellSpace(h), 0, rhs, params)
}

/// One velocity V-cycle from a zero guess.
pub fn vcycle_face(rhs: &FaceField, h: &MgHierarchy, params: &SmootherParams) -> Result<FaceField> {
    check_grid(rhs.grid(), h)?;
    vcycle_from(&FaceSpace(h), 0, rhs, params)
}

fn check_grid(g: &GridSpec, h: &MgHierarchy) -> Result<()> {
    if g != h.finest().grid() {
        return Err(StokesError::LayoutMismatch("right-hand side and hierarchy grids differ".into()));
    }
    Ok(())
}

/// `n_cycles` pressure V-cycles from a zero guess.
pub fn mg_solve_cell(rhs: &CellField, h: &MgHierarchy, params: &SmootherParams, n_cycles: usize) -> Result<CellField> {
    check_grid(rhs.grid(), h)?;
    solve(&CellSpace(h), rhs, params, n_cycles, |_| Ok(()), |x, dx| x.axpy(1.0, dx))
}

/// `n_cycles` velocity V-cycles from a zero guess.
pub fn mg_solve_face(rhs: &FaceField, h: &MgHierarchy, params: &SmootherParams, n_cycles: usize) -> Result<FaceField> {
    check_grid(rhs.grid(), h)?;
    solve(&FaceSpace(h), rhs, params, n_cycles, |_| Ok(()), |x, dx| x.axpy(1.0, dx))
}

/// Pressure solve that also reports `||rhs - L x|| / ||rhs||` after each cycle.
pub fn mg_solve_cell_history(
    rhs: &CellField,
    h: &MgHierarchy,
    params: &SmootherParams,
    n_cycles: usize,
) -> Result<(CellField, Vec<f64>)> {
    check_grid(rhs.grid(), h)?;
    let s = CellSpace(h);
    let r0 = rhs.norm2();
    let mut hist = Vec::with_capacity(n_cycles);
    let x = solve(
        &s,
        rhs,
        params,
        n_cycles,
        |x| {
            hist.push(relative(s.residual(0, x, rhs)?.norm2(), r0));
            Ok(())
        },
        |x, dx| x.axpy(1.0, dx),
    )?;
    Ok((x, hist))
}

/// Velocity counterpart of [`mg_solve_cell_history`].
pub fn mg_solve_face_history(
    rhs: &FaceField,
    h: &MgHierarchy,
    params: &SmootherParams,
    n_cycles: usize,
) -> Result<(FaceField, Vec<f64>)> {
    check_grid(rhs.grid(), h)?;
    let s = FaceSpace(h);
    let r0 = rhs.norm2();
    let mut hist = Vec::with_capacity(n_cycles);
    let x = solve(
        &s,
        rhs,
        params,
        n_cycles,
        |x| {
            hist.push(relative(s.residual(0, x, rhs)?.norm2(), r0));
            Ok(())
        },
        |x, dx| x.axpy(1.0, dx),
    )?;
    Ok((x, hist))
}

fn relative(r: f64, r0: f64) -> f64 {
    if r0 > 0.0 {
        r / r0
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryCondition::*;
    use crate::operators::ViscousForm;

    fn coeff(g: &GridSpec, theta: f64, rho: f64, mu: f64, form: ViscousForm) -> CoefficientSet {
        CoefficientSet::new(theta, CellField::constant(g, rho), CellField::constant(g, mu), None, form).unwrap()
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        (0..n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    #[test]
    fn cell_restriction_averages_children() {
        let g = GridSpec::uniform(2, 4, 1.0, NoSlip).unwrap();
        let mut f = CellField::zeros(&g);
        for (idx, v) in [([0, 0, 0], 1.0), ([1, 0, 0], 2.0), ([0, 1, 0], 3.0), ([1, 1, 0], 6.0)] {
            f.set(idx, v);
        }
        assert_eq!(restrict_cell(&f).unwrap().get([0, 0, 0]), 3.0);
        let c = restrict_cell(&CellField::constant(&g, 2.5)).unwrap();
        assert!(c.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn face_restriction_weights() {
        let g = GridSpec::uniform(2, 8, 1.0, NoSlip).unwrap();
        let mut f = FaceField::zeros(&g);
        // Coarse x-face (i, j) = (2, 1): fine faces 2i-1 = 3 and 2i = 4 on row 2j = 2.
        f.set(0, [3, 2, 0], 8.0);
        f.set(0, [4, 2, 0], 4.0);
        assert_eq!(restrict_face(&f).unwrap().get(0, [2, 1, 0]), 2.0);

        let gp = GridSpec::uniform(3, 8, 1.0, Periodic).unwrap();
        let c = restrict_face(&FaceField::from_fn(&gp, |_, _| 3.0)).unwrap();
        assert!((0..3).all(|a| c.comp(a).iter().all(|&v| (v - 3.0).abs() < 1e-15)));
    }

    #[test]
    fn odd_grids_are_rejected() {
        let g = GridSpec::new(2, &[12, 12], 1.0, &[[NoSlip; 2], [NoSlip; 2]]).unwrap();
        let c = g.coarsen().unwrap().coarsen().unwrap();
        assert_eq!(c.n(0), 3);
        assert!(restrict_cell(&CellField::zeros(&c)).is_err());
        assert!(restrict_face(&FaceField::zeros(&c)).is_err());
    }

    #[test]
    fn face_prolongation_weights() {
        let fg = GridSpec::uniform(2, 8, 1.0, NoSlip).unwrap();
        let cg = fg.coarsen().unwrap();
        let mut c = FaceField::zeros(&cg);
        // Fine (i, j) = (4, 4): coarse (2, 2) weight 3/4 and (2, 1) weight 1/4.
        c.set(0, [2, 2, 0], 4.0);
        c.set(0, [2, 1, 0], 8.0);
        assert_eq!(prolong_face(&c, &fg).get(0, [4, 4, 0]), 5.0);

        let mut c = FaceField::zeros(&cg);
        // Fine (5, 4): 3/8 on coarse (2, 2), (3, 2) and 1/8 on (2, 1), (3, 1).
        c.set(0, [2, 2, 0], 4.0);
        c.set(0, [3, 2, 0], 8.0);
        assert_eq!(prolong_face(&c, &fg).get(0, [5, 4, 0]), 4.5);
    }

    #[test]
    fn prolongation_preserves_constants_away_from_walls() {
        let fg = GridSpec::uniform(3, 8, 1.0, Periodic).unwrap();
        let cg = fg.coarsen().unwrap();
        let p = prolong_face(&FaceField::from_fn(&cg, |_, _| 2.0), &fg);
        assert!((0..3).all(|a| p.comp(a).iter().all(|&v| (v - 2.0).abs() < 1e-15)));
        let pc = prolong_cell(&CellField::constant(&cg, 2.0), &fg);
        assert!(pc.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn coefficient_coarsening() {
        let g = GridSpec::uniform(2, 4, 1.0, NoSlip).unwrap();
        let mut mu = CellField::constant(&g, 1.0);
        for (idx, v) in [([0, 0, 0], 1.0), ([1, 0, 0], 2.0), ([0, 1, 0], 3.0), ([1, 1, 0], 6.0)] {
            mu.set(idx, v);
        }
        let fine = CoefficientSet::new(1.0, CellField::constant(&g, 1.0), mu, None, ViscousForm::Stress).unwrap();
        let c = coarsen_coefficients(&fine).unwrap();
        assert_eq!(c.mu_cell.get([0, 0, 0]), 3.0);
        assert_eq!(c.mu_node_edge.get(0, 1, [1, 1, 0]), fine.mu_node_edge.get(0, 1, [2, 2, 0]));

        let g3 = GridSpec::uniform(3, 8, 1.0, NoSlip).unwrap();
        let k = coarsen_coefficients(&coeff(&g3, 2.0, 3.0, 4.0, ViscousForm::StressBulk)).unwrap();
        assert!(k.rho_face.comp(2).iter().all(|&v| v == 3.0));
        assert!(k.mu_node_edge.array(1, 2).iter().all(|&v| v == 4.0));
        assert_eq!(k.theta, 2.0);
    }

    #[test]
    fn diagonal_system_solved_in_one_sweep() {
        let g = GridSpec::uniform(2, 8, 1.0, NoSlip).unwrap();
        let c = CoefficientSet::new(2.0, CellField::constant(&g, 1.5), CellField::zeros(&g), None, ViscousForm::Stress).unwrap();
        let h = MgHierarchy::build(&c).unwrap();
        let r = FaceField::from_unknown_fn(&g, |a, i| (1 + a + i[0] * i[1]) as f64);
        let mut x = FaceField::zeros(&g);
        smooth_face(&mut x, &r, h.finest(), 1.0).unwrap();
        let mut expect = r.clone();
        expect.scale(1.0 / 3.0);
        for a in 0..2 {
            for (p, q) in x.comp(a).iter().zip(expect.comp(a)) {
                assert!((p - q).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_diagonal_is_reported() {
        let g = GridSpec::uniform(2, 8, 1.0, NoSlip).unwrap();
        let mut c = coeff(&g, 1.0, 1.0, 0.0, ViscousForm::Stress);
        c.theta = 0.0;
        let h = MgHierarchy::build(&c).unwrap();
        let mut x = FaceField::zeros(&g);
        let r = FaceField::zeros(&g);
        assert_eq!(smooth_face(&mut x, &r, h.finest(), 1.0), Err(StokesError::ZeroDiagonal("velocity")));
    }

    #[test]
    fn exact_solution_is_a_fixed_point() {
        let g = GridSpec::uniform(2, 16, 1.0, NoSlip).unwrap();
        let c = coeff(&g, 1.0, 1.0, 2.0, ViscousForm::Stress);
        let h = MgHierarchy::build(&c).unwrap();
        let x = FaceField::from_unknown_fn(&g, |a, i| ((a + 1) * i[0] + i[1] * i[1]) as f64);
        let r = apply_a(&x, &c).unwrap();
        let mut y = x.clone();
        smooth_face(&mut y, &r, h.finest(), 1.0).unwrap();
        for a in 0..2 {
            for (p, q) in y.comp(a).iter().zip(x.comp(a)) {
                assert!((p - q).abs() < 1e-10 * q.abs().max(1.0));
            }
        }
    }

    #[test]
    fn gauss_seidel_does_not_increase_poisson_residual() {
        let g = GridSpec::uniform(2, 32, 1.0, NoSlip).unwrap();
        let c = coeff(&g, 1.0, 1.0, 1.0, ViscousForm::Stress);
        let h = MgHierarchy::build(&c).unwrap();
        let mut rhs = CellField::from_vec(&g, pseudo_random(g.num_cells(), 3)).unwrap();
        rhs.subtract_mean();
        let beta = h.finest().beta.as_ref().unwrap();
        let mut x = CellField::zeros(&g);
        let mut prev = rhs.norm2();
        for _ in 0..5 {
            smooth_cell(&mut x, &rhs, h.finest(), 1.0).unwrap();
            let mut r = rhs.clone();
            r.axpy(-1.0, &apply_cell_operator(beta, &x)).unwrap();
            assert!(r.norm2() <= prev * (1.0 + 1e-12));
            prev = r.norm2();
        }
    }

    #[test]
    fn vcycle_is_linear_and_zero_preserving() {
        let g = GridSpec::uniform(2, 16, 1.0, NoSlip).unwrap();
        let c = coeff(&g, 0.5, 1.0, 1.0, ViscousForm::Stress);
        let h = MgHierarchy::build(&c).unwrap();
        let p = SmootherParams::default();
        assert_eq!(vcycle_face(&FaceField::zeros(&g), &h, &p).unwrap().max_abs(), 0.0);
        assert_eq!(vcycle_cell(&CellField::zeros(&g), &h, &p).unwrap().norm2(), 0.0);

        let nu = g.num_velocity_unknowns();
        let r1 = crate::grid::face_from_unknowns(&g, &pseudo_random(nu, 1));
        let r2 = crate::grid::face_from_unknowns(&g, &pseudo_random(nu, 2));
        let mut comb = r1.clone();
        comb.scale(2.0);
        comb.axpy(-3.0, &r2).unwrap();
        let mut expect = vcycle_face(&r1, &h, &p).unwrap();
        expect.scale(2.0);
        expect.axpy(-3.0, &vcycle_face(&r2, &h, &p).unwrap()).unwrap();
        let got = vcycle_face(&comb, &h, &p).unwrap();
        let mut diff = got.clone();
        diff.axpy(-1.0, &expect).unwrap();
        assert!(diff.norm2() <= 1e-12 * expect.norm2());
        assert_eq!(got, vcycle_face(&comb, &h, &p).unwrap());
    }

    #[test]
    fn one_cycle_solve_equals_vcycle() {
        let g = GridSpec::uniform(2, 16, 1.0, Periodic).unwrap();
        let c = coeff(&g, 1.0, 1.0, 1.0, ViscousForm::Laplacian);
        let h = MgHierarchy::build(&c).unwrap();
        let mut r = CellField::from_vec(&g, pseudo_random(g.num_cells(), 9)).unwrap();
        r.subtract_mean();
        let p = SmootherParams::default();
        assert_eq!(mg_solve_cell(&r, &h, &p, 1).unwrap(), vcycle_cell(&r, &h, &p).unwrap());
        assert!(mg_solve_cell(&r, &h, &p, 0).is_err());
    }

    #[test]
    fn smoother_params_validation() {
        assert!(SmootherParams::default().validate().is_ok());
        assert!(SmootherParams { omega: 0.0, ..Default::default() }.validate().is_err());
        assert!(SmootherParams { bottom_sweeps: 4, ..Default::default() }.validate().is_err());
        assert!(SmootherParams::with_sweeps(0).validate().is_err());
    }
}
