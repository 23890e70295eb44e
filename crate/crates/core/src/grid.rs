//! Staggered (MAC) grid geometry and the field containers living on it.
//!
//! Scalars sit at cell centers, the axis-`a` velocity component sits on
//! the faces normal to axis `a`, and cross-derivative viscosities sit on
//! nodes (2D) or edges (3D). All arrays are stored with the first index
//! running fastest.
//!
//! Wall-bounded axes store their boundary faces explicitly. Those entries
//! hold prescribed normal velocities and are never part of the linear
//! algebra: inner products, norms and means run over unknown DOFs only.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StokesError};

pub const LO: usize = 0;
pub const HI: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryCondition {
    Periodic,
    NoSlip,
    FreeSlip,
}

impl BoundaryCondition {
    pub fn is_wall(self) -> bool {
        !matches!(self, BoundaryCondition::Periodic)
    }
}

/// Uniform staggered grid on a rectangular domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    cells: [usize; 3],
    h: f64,
    bc: [[BoundaryCondition; 2]; 3],
}

/// Cell counts accepted per axis: `2^k` or `3 * 2^k`, at least 4.
fn valid_cell_count(n: usize) -> bool {
    if n < 4 {
        return false;
    }
    let odd = n >> n.trailing_zeros();
    odd == 1 || odd == 3
}

impl GridSpec {
    pub fn new(
        dim: usize,
        cells: &[usize],
        h: f64,
        bc: &[[BoundaryCondition; 2]],
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(StokesError::InvalidGrid(format!("dimension {dim} not in {{2, 3}}")));
        }
        if cells.len() != dim || bc.len() != dim {
            return Err(StokesError::InvalidGrid(format!(
                "expected {dim} cell counts and boundary pairs, got {} and {}",
                cells.len(),
                bc.len()
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(StokesError::InvalidGrid(format!("grid spacing {h} must be positive")));
        }
        let mut c = [1usize; 3];
        let mut b = [[BoundaryCondition::Periodic; 2]; 3];
        for axis in 0..dim {
            if !valid_cell_count(cells[axis]) {
                return Err(StokesError::InvalidGrid(format!(
                    "cell count {} on axis {axis} must be >= 4 and a power of two (optionally times 3)",
                    cells[axis]
                )));
            }
            let [lo, hi] = bc[axis];
            if (lo == BoundaryCondition::Periodic) != (hi == BoundaryCondition::Periodic) {
                return Err(StokesError::InvalidGrid(format!(
                    "axis {axis}: periodic on one side requires periodic on the other"
                )));
            }
            c[axis] = cells[axis];
            b[axis] = bc[axis];
        }
        Ok(Self { dim, cells: c, h, bc: b })
    }

    /// Square/cubic grid with the same boundary condition on every side.
    pub fn uniform(dim: usize, n: usize, h: f64, bc: BoundaryCondition) -> Result<Self> {
        Self::new(dim, &vec![n; dim], h, &vec![[bc; 2]; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Per-axis cell counts; unused trailing axes hold 1.
    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    pub fn n(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn bc(&self, axis: usize, side: usize) -> BoundaryCondition {
        self.bc[axis][side]
    }

    pub fn periodic(&self, axis: usize) -> bool {
        axis < self.dim && self.bc[axis][LO] == BoundaryCondition::Periodic
    }

    pub fn wall(&self, axis: usize) -> bool {
        axis < self.dim && !self.periodic(axis)
    }

    pub fn all_periodic(&self) -> bool {
        (0..self.dim).all(|a| self.periodic(a))
    }

    pub fn num_cells(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn cell_shape(&self) -> [usize; 3] {
        self.cells
    }

    /// Number of node positions along `axis` (wrapping on periodic axes).
    pub fn node_count(&self, axis: usize) -> usize {
        if self.wall(axis) {
            self.cells[axis] + 1
        } else {
            self.cells[axis]
        }
    }

    /// Storage shape of the axis-`a` face component.
    pub fn face_shape(&self, a: usize) -> [usize; 3] {
        let mut s = self.cells;
        s[a] = self.node_count(a);
        s
    }

    pub fn face_len(&self, a: usize) -> usize {
        self.face_shape(a).iter().product()
    }

    /// Orientation pairs `(a, b)`, `a < b`, of the cross-derivative locations.
    pub fn pairs(&self) -> &'static [(usize, usize)] {
        if self.dim == 2 {
            &[(0, 1)]
        } else {
            &[(0, 1), (0, 2), (1, 2)]
        }
    }

    /// Storage slot of pair `{a, b}` inside a [`NodeEdgeField`].
    pub fn pair_slot(&self, a: usize, b: usize) -> usize {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        match (lo, hi) {
            (0, 1) => 0,
            (0, 2) => 1,
            (1, 2) => 2,
            _ => panic!("invalid axis pair ({a}, {b})"),
        }
    }

    /// Storage shape of the node/edge array for pair `{a, b}`.
    pub fn edge_shape(&self, a: usize, b: usize) -> [usize; 3] {
        let mut s = self.cells;
        s[a] = self.node_count(a);
        s[b] = self.node_count(b);
        s
    }

    /// Index ranges of unknown faces of component `a`.
    pub fn face_unknown_ranges(&self, a: usize) -> [Range<usize>; 3] {
        let s = self.face_shape(a);
        let mut r = [0..s[0], 0..s[1], 0..s[2]];
        if self.wall(a) {
            r[a] = 1..s[a] - 1;
        }
        r
    }

    pub fn num_face_unknowns(&self, a: usize) -> usize {
        self.face_unknown_ranges(a).iter().map(|r| r.len()).product()
    }

    pub fn num_velocity_unknowns(&self) -> usize {
        (0..self.dim).map(|a| self.num_face_unknowns(a)).sum()
    }

    pub fn num_unknowns(&self) -> usize {
        self.num_velocity_unknowns() + self.num_cells()
    }

    /// Whether face `idx` of component `a` is a held boundary face.
    pub fn is_boundary_face(&self, a: usize, idx: [usize; 3]) -> bool {
        self.wall(a) && (idx[a] == 0 || idx[a] == self.cells[a])
    }

    /// The grid one multigrid level down, if every axis can be halved.
    pub fn coarsen(&self) -> Option<GridSpec> {
        let can = (0..self.dim).all(|a| self.cells[a].is_multiple_of(2) && self.cells[a] / 2 >= 2);
        if !can {
            return None;
        }
        let mut g = *self;
        for a in 0..self.dim {
            g.cells[a] /= 2;
        }
        g.h *= 2.0;
        Some(g)
    }

    pub fn domain_length(&self, axis: usize) -> f64 {
        self.cells[axis] as f64 * self.h
    }

    pub fn cell_center(&self, idx: [usize; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = (idx[a] as f64 + 0.5) * self.h;
        }
        x
    }

    pub fn face_center(&self, a: usize, idx: [usize; 3]) -> [f64; 3] {
        let mut x = self.cell_center(idx);
        x[a] = idx[a] as f64 * self.h;
        x
    }
}

/// Linear offset of `idx` in an array of the given shape.
#[inline(always)]
pub fn linear(shape: [usize; 3], idx: [usize; 3]) -> usize {
    idx[0] + shape[0] * (idx[1] + shape[1] * idx[2])
}

/// Calls `f` for every index in the box, first axis fastest.
#[inline]
pub fn for_each_index(ranges: &[Range<usize>; 3], mut f: impl FnMut([usize; 3])) {
    for k in ranges[2].clone() {
        for j in ranges[1].clone() {
            for i in ranges[0].clone() {
                f([i, j, k]);
            }
        }
    }
}

fn full_range(shape: [usize; 3]) -> [Range<usize>; 3] {
    [0..shape[0], 0..shape[1], 0..shape[2]]
}

fn mismatch(what: &str) -> StokesError {
    StokesError::LayoutMismatch(format!("{what} fields live on different grids"))
}

/// One scalar per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    grid: GridSpec,
    data: Vec<f64>,
}

impl CellField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self { grid: *grid, data: vec![0.0; grid.num_cells()] }
    }

    pub fn constant(grid: &GridSpec, value: f64) -> Self {
        Self { grid: *grid, data: vec![value; grid.num_cells()] }
    }

    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut([usize; 3]) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.num_cells());
        for_each_index(&full_range(grid.cells()), |idx| data.push(f(idx)));
        Self { grid: *grid, data }
    }

    pub fn from_vec(grid: &GridSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.num_cells() {
            return Err(StokesError::LayoutMismatch(format!(
                "cell field needs {} values, got {}",
                grid.num_cells(),
                data.len()
            )));
        }
        Ok(Self { grid: *grid, data })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline(always)]
    pub fn get(&self, idx: [usize; 3]) -> f64 {
        self.data[linear(self.grid.cells, idx)]
    }

    #[inline(always)]
    pub fn set(&mut self, idx: [usize; 3], v: f64) {
        let l = linear(self.grid.cells, idx);
        self.data[l] = v;
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(mismatch("cell"));
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &Self) -> Result<()> {
        self.check(x)?;
        for (y, x) in self.data.iter_mut().zip(&x.data) {
            *y += alpha * x;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn subtract_mean(&mut self) {
        let m = self.mean();
        self.data.iter_mut().for_each(|v| *v -= m);
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Velocity-like field with one component array per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    grid: GridSpec,
    comps: Vec<Vec<f64>>,
}

impl FaceField {
    pub fn zeros(grid: &GridSpec) -> Self {
        let comps = (0..grid.dim()).map(|a| vec![0.0; grid.face_len(a)]).collect();
        Self { grid: *grid, comps }
    }

    /// Fills every stored face, boundary faces included.
    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut(usize, [usize; 3]) -> f64) -> Self {
        let comps = (0..grid.dim())
            .map(|a| {
                let mut v = Vec::with_capacity(grid.face_len(a));
                for_each_index(&full_range(grid.face_shape(a)), |idx| v.push(f(a, idx)));
                v
            })
            .collect();
        Self { grid: *grid, comps }
    }

    /// Fills unknown faces from `f` and leaves boundary faces at zero.
    pub fn from_unknown_fn(grid: &GridSpec, mut f: impl FnMut(usize, [usize; 3]) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for a in 0..grid.dim() {
            let shape = grid.face_shape(a);
            let comp = &mut out.comps[a];
            for_each_index(&grid.face_unknown_ranges(a), |idx| comp[linear(shape, idx)] = f(a, idx));
        }
        out
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn comp(&self, a: usize) -> &[f64] {
        &self.comps[a]
    }

    pub fn comp_mut(&mut self, a: usize) -> &mut [f64] {
        &mut self.comps[a]
    }

    #[inline(always)]
    pub fn get(&self, a: usize, idx: [usize; 3]) -> f64 {
        self.comps[a][linear(self.grid.face_shape(a), idx)]
    }

    #[inline(always)]
    pub fn set(&mut self, a: usize, idx: [usize; 3], v: f64) {
        let l = linear(self.grid.face_shape(a), idx);
        self.comps[a][l] = v;
    }

    /// True when every stored entry, boundary faces included, is positive.
    pub fn comps_all_positive(&self) -> bool {
        self.comps.iter().flatten().all(|&v| v > 0.0)
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        self.comps.iter_mut().flatten().for_each(|v| *v = f(*v));
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(mismatch("face"));
        }
        Ok(())
    }

    /// Calls `f(component, index, linear offset)` on every unknown face.
    pub fn for_each_unknown(grid: &GridSpec, mut f: impl FnMut(usize, [usize; 3], usize)) {
        for a in 0..grid.dim() {
            let shape = grid.face_shape(a);
            for_each_index(&grid.face_unknown_ranges(a), |idx| f(a, idx, linear(shape, idx)));
        }
    }

    /// Euclidean inner product over unknown faces.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check(other)?;
        let mut s = 0.0;
        for a in 0..self.grid.dim() {
            s += self.component_dot(other, a);
        }
        Ok(s)
    }

    fn component_dot(&self, other: &Self, a: usize) -> f64 {
        let (x, y) = (&self.comps[a], &other.comps[a]);
        if !self.grid.wall(a) {
            return x.iter().zip(y).map(|(p, q)| p * q).sum();
        }
        let shape = self.grid.face_shape(a);
        let mut s = 0.0;
        for_each_index(&self.grid.face_unknown_ranges(a), |idx| {
            let l = linear(shape, idx);
            s += x[l] * y[l];
        });
        s
    }

    pub fn norm2(&self) -> f64 {
        (0..self.grid.dim())
            .map(|a| self.component_dot(self, a))
            .sum::<f64>()
            .sqrt()
    }

    /// `self += alpha * x` on every stored entry.
    pub fn axpy(&mut self, alpha: f64, x: &Self) -> Result<()> {
        self.check(x)?;
        for (ys, xs) in self.comps.iter_mut().zip(&x.comps) {
            for (y, x) in ys.iter_mut().zip(xs) {
                *y += alpha * x;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.comps.iter_mut().flatten().for_each(|v| *v *= alpha);
    }

    /// Mean of component `a` over its unknown faces.
    pub fn component_mean(&self, a: usize) -> f64 {
        let shape = self.grid.face_shape(a);
        let mut s = 0.0;
        for_each_index(&self.grid.face_unknown_ranges(a), |idx| s += self.comps[a][linear(shape, idx)]);
        s / self.grid.num_face_unknowns(a) as f64
    }

    /// Subtracts the unknown-face mean from component `a`.
    pub fn subtract_component_mean(&mut self, a: usize) {
        let m = self.component_mean(a);
        let shape = self.grid.face_shape(a);
        let grid = self.grid;
        let comp = &mut self.comps[a];
        for_each_index(&grid.face_unknown_ranges(a), |idx| comp[linear(shape, idx)] -= m);
    }

    /// Zeroes every held boundary face.
    pub fn zero_boundary(&mut self) {
        for a in 0..self.grid.dim() {
            if !self.grid.wall(a) {
                continue;
            }
            let shape = self.grid.face_shape(a);
            let mut r = full_range(shape);
            for layer in [0, shape[a] - 1] {
                r[a] = layer..layer + 1;
                let comp = &mut self.comps[a];
                for_each_index(&r, |idx| comp[linear(shape, idx)] = 0.0);
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Node-centered (2D) or edge-centered (3D) scalars, one array per axis pair.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEdgeField {
    grid: GridSpec,
    arrays: Vec<Vec<f64>>,
}

impl NodeEdgeField {
    pub fn zeros(grid: &GridSpec) -> Self {
        let arrays = grid
            .pairs()
            .iter()
            .map(|&(a, b)| vec![0.0; grid.edge_shape(a, b).iter().product()])
            .collect();
        Self { grid: *grid, arrays }
    }

    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut(usize, usize, [usize; 3]) -> f64) -> Self {
        let arrays = grid
            .pairs()
            .iter()
            .map(|&(a, b)| {
                let shape = grid.edge_shape(a, b);
                let mut v = Vec::with_capacity(shape.iter().product());
                for_each_index(&full_range(shape), |idx| v.push(f(a, b, idx)));
                v
            })
            .collect();
        Self { grid: *grid, arrays }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn array(&self, a: usize, b: usize) -> &[f64] {
        &self.arrays[self.grid.pair_slot(a, b)]
    }

    pub fn array_mut(&mut self, a: usize, b: usize) -> &mut [f64] {
        let s = self.grid.pair_slot(a, b);
        &mut self.arrays[s]
    }

    pub fn scale(&mut self, alpha: f64) {
        self.arrays.iter_mut().flatten().for_each(|v| *v *= alpha);
    }

    #[inline(always)]
    pub fn get(&self, a: usize, b: usize, idx: [usize; 3]) -> f64 {
        let slot = self.grid.pair_slot(a, b);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.arrays[slot][linear(self.grid.edge_shape(lo, hi), idx)]
    }
}

/// Velocity/pressure pair: the unknown and right-hand-side type of the
/// saddle-point system.
#[derive(Debug, Clone, PartialEq)]
pub struct StokesVector {
    pub u: FaceField,
    pub p: CellField,
}

impl StokesVector {
    pub fn new(u: FaceField, p: CellField) -> Result<Self> {
        if u.grid() != p.grid() {
            return Err(mismatch("velocity and pressure"));
        }
        Ok(Self { u, p })
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        Self { u: FaceField::zeros(grid), p: CellField::zeros(grid) }
    }

    pub fn grid(&self) -> &GridSpec {
        self.p.grid()
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        Ok(self.u.dot(&other.u)? + self.p.dot(&other.p)?)
    }

    pub fn norm2(&self) -> f64 {
        let u = self.u.norm2();
        let p = self.p.norm2();
        (u * u + p * p).sqrt()
    }

    pub fn axpy(&mut self, alpha: f64, x: &Self) -> Result<()> {
        self.u.axpy(alpha, &x.u)?;
        self.p.axpy(alpha, &x.p)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.u.scale(alpha);
        self.p.scale(alpha);
    }

    /// Packs unknown DOFs: velocity components in axis order, then pressure.
    pub fn to_unknowns(&self) -> Vec<f64> {
        let grid = *self.grid();
        let mut v = Vec::with_capacity(grid.num_unknowns());
        FaceField::for_each_unknown(&grid, |a, _, l| v.push(self.u.comp(a)[l]));
        v.extend_from_slice(self.p.data());
        v
    }

    pub fn from_unknowns(grid: &GridSpec, values: &[f64]) -> Result<Self> {
        if values.len() != grid.num_unknowns() {
            return Err(StokesError::LayoutMismatch(format!(
                "expected {} unknowns, got {}",
                grid.num_unknowns(),
                values.len()
            )));
        }
        let nu = grid.num_velocity_unknowns();
        Ok(Self {
            u: face_from_unknowns(grid, &values[..nu]),
            p: CellField::from_vec(grid, values[nu..].to_vec())?,
        })
    }
}

/// Packs the unknown faces of `u` in axis order.
pub fn face_to_unknowns(u: &FaceField) -> Vec<f64> {
    let mut v = Vec::with_capacity(u.grid().num_velocity_unknowns());
    FaceField::for_each_unknown(u.grid(), |a, _, l| v.push(u.comp(a)[l]));
    v
}

/// Inverse of [`face_to_unknowns`]; boundary faces are zero.
pub fn face_from_unknowns(grid: &GridSpec, values: &[f64]) -> FaceField {
    let mut it = values.iter();
    FaceField::from_unknown_fn(grid, |_, _| *it.next().expect("too few velocity unknowns"))
}
