//! Staggered space-time discretization of `(0,1) x [-R,R]^d`.
//!
//! Layout:
//! - densities live on `nt + 1` time nodes (`t_k = k dt`), one value per spatial cell;
//! - momenta live on the `nt` time cells and on spatial faces (boundary faces carry
//!   the no-flux condition and are always zero);
//! - scalar fields (`u`, `alpha`, centered quantities) live on the `nt x nx^d`
//!   space-time cell centers.
//!
//! Spatial cells are stored row-major, `c = i * nx + j` for `d = 2`, time-major
//! outside of that.

mod io;
mod poisson;
mod project;

pub use io::{
    read_density, read_density_slice, read_header, read_momentum, read_scalar, write_csv_1d,
    write_density, write_density_slice, write_momentum, write_scalar, FieldHeader, FieldKind,
};
pub use poisson::NeumannPoisson;
pub use project::{check_endpoint_masses, project_continuity, ContinuityProjector};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the box; for `d = 1` only the first coordinate is used.
pub type Point = [f64; 2];

/// Spatial part of the discretization: `nx^d` cells covering `[-R, R]^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    pub d: usize,
    pub nx: usize,
    #[serde(rename = "R")]
    pub r: f64,
}

impl SpaceGrid {
    pub fn new(d: usize, nx: usize, r: f64) -> Result<Self> {
        let g = SpaceGrid { d, nx, r };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d != 1 && self.d != 2 {
            return Err(Error::Unsupported(format!("dimension d = {} (only 1 and 2)", self.d)));
        }
        if self.nx < 4 {
            return Err(Error::Invalid(format!("nx = {} < 4", self.nx)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Invalid(format!("R = {} must be positive", self.r)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.r / self.nx as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.d as i32)
    }

    pub fn n_cells(&self) -> usize {
        self.nx.pow(self.d as u32)
    }

    /// Euclidean diameter of the box.
    pub fn diameter(&self) -> f64 {
        2.0 * self.r * (self.d as f64).sqrt()
    }

    pub fn center_coord(&self, i: usize) -> f64 {
        -self.r + (i as f64 + 0.5) * self.dx()
    }

    pub fn face_coord(&self, i: usize) -> f64 {
        -self.r + i as f64 * self.dx()
    }

    pub fn multi_index(&self, c: usize) -> [usize; 2] {
        if self.d == 1 {
            [c, 0]
        } else {
            [c / self.nx, c % self.nx]
        }
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        if self.d == 1 {
            idx[0]
        } else {
            idx[0] * self.nx + idx[1]
        }
    }

    pub fn cell_center(&self, c: usize) -> Point {
        let idx = self.multi_index(c);
        if self.d == 1 {
            [self.center_coord(idx[0]), 0.0]
        } else {
            [self.center_coord(idx[0]), self.center_coord(idx[1])]
        }
    }

    /// Number of faces normal to `axis` (boundary faces included); the same for
    /// every axis.
    pub fn n_faces(&self, _axis: usize) -> usize {
        (self.nx + 1) * self.nx.pow(self.d as u32 - 1)
    }

    /// Face index for a multi-index whose `axis` component runs over `0..=nx`.
    pub fn face_index(&self, axis: usize, idx: [usize; 2]) -> usize {
        match (self.d, axis) {
            (1, _) => idx[0],
            (_, 0) => idx[0] * self.nx + idx[1],
            _ => idx[0] * (self.nx + 1) + idx[1],
        }
    }

    /// Low and high faces of cell `c` along `axis`.
    pub fn cell_faces(&self, axis: usize, c: usize) -> (usize, usize) {
        let mut idx = self.multi_index(c);
        let lo = self.face_index(axis, idx);
        idx[axis] += 1;
        (lo, self.face_index(axis, idx))
    }

    /// Whether a face index (normal to `axis`) sits on the box boundary.
    pub fn is_boundary_face(&self, axis: usize, f: usize) -> bool {
        let along = match (self.d, axis) {
            (1, _) => f,
            (_, 0) => f / self.nx,
            _ => f % (self.nx + 1),
        };
        along == 0 || along == self.nx
    }

    /// Cell containing `x` (clamped to the box).
    pub fn cell_of(&self, x: &[f64]) -> usize {
        let h = self.dx();
        let mut idx = [0usize; 2];
        for a in 0..self.d {
            let k = ((x[a] + self.r) / h).floor();
            idx[a] = k.clamp(0.0, (self.nx - 1) as f64) as usize;
        }
        self.flat_index(idx)
    }

    /// Lower center index and weight for linear interpolation between cell centers,
    /// constant extrapolation past the outermost centers.
    fn bracket(&self, x: f64) -> (usize, f64) {
        let s = (x + self.r) / self.dx() - 0.5;
        let max = (self.nx - 1) as f64;
        if s <= 0.0 {
            (0, 0.0)
        } else if s >= max {
            (self.nx - 2, 1.0)
        } else {
            let i = s.floor() as usize;
            let i = i.min(self.nx - 2);
            (i, s - i as f64)
        }
    }

    /// Piecewise-(bi)linear interpolation of cell-centered samples.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let (i, a) = self.bracket(x[0]);
        if self.d == 1 {
            return (1.0 - a) * values[i] + a * values[i + 1];
        }
        let (j, b) = self.bracket(x[1]);
        let nx = self.nx;
        let v00 = values[i * nx + j];
        let v01 = values[i * nx + j + 1];
        let v10 = values[(i + 1) * nx + j];
        let v11 = values[(i + 1) * nx + j + 1];
        (1.0 - a) * ((1.0 - b) * v00 + b * v01) + a * ((1.0 - b) * v10 + b * v11)
    }

    pub fn mass(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.cell_volume()
    }

    /// Mass carried by the outermost ring of cells.
    pub fn boundary_mass(&self, values: &[f64]) -> f64 {
        let last = self.nx - 1;
        let mut total = 0.0;
        for (c, v) in values.iter().enumerate() {
            let idx = self.multi_index(c);
            let edge = (0..self.d).any(|a| idx[a] == 0 || idx[a] == last);
            if edge {
                total += v;
            }
        }
        total * self.cell_volume()
    }

    pub fn weights(&self) -> Weights {
        Weights {
            kappa: (0..self.n_cells())
                .map(|c| {
                    let x = self.cell_center(c);
                    1.0 + x[..self.d].iter().map(|v| v * v).sum::<f64>()
                })
                .collect(),
        }
    }
}

/// Space-time discretization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub nt: usize,
    pub nx: usize,
    #[serde(rename = "R")]
    pub r: f64,
}

impl GridSpec {
    pub fn new(d: usize, nt: usize, nx: usize, r: f64) -> Result<Self> {
        let g = GridSpec { d, nt, nx, r };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        self.space().validate()?;
        if self.nt < 2 {
            return Err(Error::Invalid(format!("nt = {} < 2", self.nt)));
        }
        Ok(())
    }

    pub fn space(&self) -> SpaceGrid {
        SpaceGrid {
            d: self.d,
            nx: self.nx,
            r: self.r,
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.nt as f64
    }

    pub fn dx(&self) -> f64 {
        self.space().dx()
    }

    pub fn n_cells(&self) -> usize {
        self.space().n_cells()
    }

    /// `dt * dx^d`.
    pub fn cell_measure(&self) -> f64 {
        self.dt() * self.space().cell_volume()
    }

    /// Time of the center of time cell `k`.
    pub fn cell_time(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dt()
    }

    pub fn node_time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    fn check_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::Shape(format!("{what}: grids differ ({self:?} vs {other:?})")));
        }
        Ok(())
    }
}

/// A single density slice on the spatial grid (endpoint data, heat flow, metrics).
#[derive(Clone, Debug, PartialEq)]
pub struct Density {
    pub space: SpaceGrid,
    pub values: Vec<f64>,
}

impl Density {
    pub fn new(space: SpaceGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.n_cells() {
            return Err(Error::Shape(format!(
                "density has {} values, grid has {} cells",
                values.len(),
                space.n_cells()
            )));
        }
        Ok(Density { space, values })
    }

    pub fn uniform(space: SpaceGrid) -> Self {
        let v = 1.0 / (space.n_cells() as f64 * space.cell_volume());
        Density {
            space,
            values: vec![v; space.n_cells()],
        }
    }

    /// Samples `f` at cell centers and normalizes to unit mass.
    pub fn from_fn(space: SpaceGrid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values: Vec<f64> = (0..space.n_cells())
            .map(|c| f(&space.cell_center(c)[..space.d]))
            .collect();
        let mut d = Density { space, values };
        d.normalize()?;
        Ok(d)
    }

    pub fn mass(&self) -> f64 {
        self.space.mass(&self.values)
    }

    pub fn normalize(&mut self) -> Result<()> {
        if self.values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Domain("density has negative or non-finite entries".into()));
        }
        let mass = self.mass();
        if mass <= 0.0 {
            return Err(Error::Domain("density has zero total mass".into()));
        }
        self.values.iter_mut().for_each(|v| *v /= mass);
        Ok(())
    }

    /// Cyclic lattice shift along axis 0 by `cells` (positive moves mass right).
    pub fn shifted(&self, cells: isize) -> Density {
        let nx = self.space.nx as isize;
        let mut out = vec![0.0; self.values.len()];
        for (c, v) in self.values.iter().enumerate() {
            let mut idx = self.space.multi_index(c);
            idx[0] = (idx[0] as isize + cells).rem_euclid(nx) as usize;
            out[self.space.flat_index(idx)] = *v;
        }
        Density {
            space: self.space,
            values: out,
        }
    }
}

/// Density on the `nt + 1` time nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    pub grid: GridSpec,
    pub data: Vec<f64>,
}

impl DensityField {
    pub fn zeros(grid: GridSpec) -> Self {
        DensityField {
            grid,
            data: vec![0.0; (grid.nt + 1) * grid.n_cells()],
        }
    }

    pub fn n_slices(&self) -> usize {
        self.grid.nt + 1
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.n_cells();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.n_cells();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn slice_density(&self, k: usize) -> Density {
        Density {
            space: self.grid.space(),
            values: self.slice(k).to_vec(),
        }
    }

    /// Mass of each time slice.
    pub fn slice_masses(&self) -> Vec<f64> {
        let space = self.grid.space();
        (0..self.n_slices()).map(|k| space.mass(self.slice(k))).collect()
    }
}

/// Momentum on spatial faces of each time cell, one component per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumField {
    pub grid: GridSpec,
    pub comps: Vec<Vec<f64>>,
}

impl MomentumField {
    pub fn zeros(grid: GridSpec) -> Self {
        let space = grid.space();
        MomentumField {
            grid,
            comps: (0..grid.d)
                .map(|a| vec![0.0; grid.nt * space.n_faces(a)])
                .collect(),
        }
    }

    pub fn faces(&self, a: usize, k: usize) -> &[f64] {
        let n = self.grid.space().n_faces(a);
        &self.comps[a][k * n..(k + 1) * n]
    }

    pub fn faces_mut(&mut self, a: usize, k: usize) -> &mut [f64] {
        let n = self.grid.space().n_faces(a);
        &mut self.comps[a][k * n..(k + 1) * n]
    }

    /// Forces the normal component on boundary faces to zero.
    pub fn zero_boundary(&mut self) {
        let space = self.grid.space();
        for a in 0..self.grid.d {
            let nf = space.n_faces(a);
            for (f, v) in self.comps[a].iter_mut().enumerate() {
                if space.is_boundary_face(a, f % nf) {
                    *v = 0.0;
                }
            }
        }
    }

    /// Largest absolute normal flux through the boundary.
    pub fn max_boundary_flux(&self) -> f64 {
        let space = self.grid.space();
        let mut worst: f64 = 0.0;
        for a in 0..self.grid.d {
            let nf = space.n_faces(a);
            for (f, v) in self.comps[a].iter().enumerate() {
                if space.is_boundary_face(a, f % nf) {
                    worst = worst.max(v.abs());
                }
            }
        }
        worst
    }
}

/// Values on the `nt x nx^d` space-time cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, v: f64) -> Self {
        ScalarField {
            grid,
            data: vec![v; grid.nt * grid.n_cells()],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, &[f64]) -> f64) -> Self {
        let space = grid.space();
        let n = grid.n_cells();
        let mut data = Vec::with_capacity(grid.nt * n);
        for k in 0..grid.nt {
            let t = grid.cell_time(k);
            for c in 0..n {
                data.push(f(t, &space.cell_center(c)[..grid.d]));
            }
        }
        ScalarField { grid, data }
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.n_cells();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.n_cells();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `sum(values) * dt * dx^d`.
    pub fn integral(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.grid.cell_measure()
    }
}

/// A `d`-component vector field on space-time cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct CellVectorField {
    pub grid: GridSpec,
    pub comps: Vec<ScalarField>,
}

impl CellVectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        CellVectorField {
            grid,
            comps: (0..grid.d).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    /// Vector at space-time cell `idx` (flat index into `nt * n_cells`).
    pub fn at(&self, idx: usize) -> Point {
        let mut v = [0.0; 2];
        for (a, comp) in self.comps.iter().enumerate() {
            v[a] = comp.data[idx];
        }
        v
    }
}

/// `kappa(x) = 1 + |x|^2` per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub kappa: Vec<f64>,
}

/// Centered discrete `d_t m + div w` on every space-time cell.
pub fn continuity_residual(m: &DensityField, w: &MomentumField) -> Result<ScalarField> {
    m.grid.check_same(&w.grid, "continuity_residual")?;
    let grid = m.grid;
    let space = grid.space();
    let n = grid.n_cells();
    let (dt, dx) = (grid.dt(), grid.dx());
    let mut out = ScalarField::zeros(grid);
    for k in 0..grid.nt {
        let lo = m.slice(k);
        let hi = m.slice(k + 1);
        let res = out.slice_mut(k);
        for c in 0..n {
            res[c] = (hi[c] - lo[c]) / dt;
        }
        for a in 0..grid.d {
            let faces = w.faces(a, k);
            for (c, r) in res.iter_mut().enumerate() {
                let (f_lo, f_hi) = space.cell_faces(a, c);
                *r += (faces[f_hi] - faces[f_lo]) / dx;
            }
        }
    }
    Ok(out)
}

/// Average of the two faces bracketing each cell, per axis.
pub fn interp_face_to_center(w: &MomentumField) -> CellVectorField {
    let grid = w.grid;
    let space = grid.space();
    let n = grid.n_cells();
    let mut out = CellVectorField::zeros(grid);
    for a in 0..grid.d {
        for k in 0..grid.nt {
            let faces = w.faces(a, k);
            let dst = out.comps[a].slice_mut(k);
            for (c, v) in dst.iter_mut().enumerate().take(n) {
                let (lo, hi) = space.cell_faces(a, c);
                *v = 0.5 * (faces[lo] + faces[hi]);
            }
        }
    }
    out
}

/// Average of the two cells adjacent to each interior face; boundary faces are zero.
///
/// Adjoint of [`interp_face_to_center`] on momentum fields with zero boundary flux.
pub fn interp_center_to_face(s: &CellVectorField) -> MomentumField {
    let grid = s.grid;
    let space = grid.space();
    let mut out = MomentumField::zeros(grid);
    for a in 0..grid.d {
        for k in 0..grid.nt {
            let src = s.comps[a].slice(k);
            let faces = out.faces_mut(a, k);
            for (c, v) in src.iter().enumerate() {
                let (lo, hi) = space.cell_faces(a, c);
                faces[lo] += 0.5 * v;
                faces[hi] += 0.5 * v;
            }
        }
    }
    out.zero_boundary();
    out
}

/// Midpoint-in-time average of node densities onto time cells.
pub fn centered_density(m: &DensityField) -> ScalarField {
    let grid = m.grid;
    let mut out = ScalarField::zeros(grid);
    for k in 0..grid.nt {
        let (lo, hi) = (m.slice(k), m.slice(k + 1));
        for (o, (a, b)) in out.slice_mut(k).iter_mut().zip(lo.iter().zip(hi)) {
            *o = 0.5 * (a + b);
        }
    }
    out
}

/// Exact adjoint of [`centered_density`].
pub fn centered_density_adjoint(s: &ScalarField) -> DensityField {
    let grid = s.grid;
    let mut out = DensityField::zeros(grid);
    for k in 0..grid.nt {
        let src = s.slice(k).to_vec();
        for (o, v) in out.slice_mut(k).iter_mut().zip(&src) {
            *o += 0.5 * v;
        }
        for (o, v) in out.slice_mut(k + 1).iter_mut().zip(&src) {
            *o += 0.5 * v;
        }
    }
    out
}

/// Integral quantities of one density slice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceNorms {
    pub mass: f64,
    pub l1_kappa: f64,
    pub lp: f64,
    pub quadratic_moment: f64,
}

/// Per-slice and space-time aggregated norms of a density field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedNorms {
    pub per_slice: Vec<SliceNorms>,
    pub l1_kappa: f64,
    pub lp: f64,
    pub quadratic_moment: f64,
}

/// `int kappa m`, `(int m^p)^(1/p)` and `int |x|^2 m` for one slice (midpoint rule).
pub fn slice_norms(space: &SpaceGrid, values: &[f64], p: f64) -> SliceNorms {
    let vol = space.cell_volume();
    let (mut mass, mut mom, mut pow) = (0.0, 0.0, 0.0);
    for (c, v) in values.iter().enumerate() {
        let x = space.cell_center(c);
        let r2: f64 = x[..space.d].iter().map(|a| a * a).sum();
        mass += v;
        mom += r2 * v;
        pow += v.max(0.0).powf(p);
    }
    SliceNorms {
        mass: mass * vol,
        l1_kappa: (mass + mom) * vol,
        lp: (pow * vol).powf(1.0 / p),
        quadratic_moment: mom * vol,
    }
}

/// Weighted norms per time node, aggregated over `Q` with the trapezoid rule in time.
pub fn weighted_norms(m: &DensityField, p: f64) -> WeightedNorms {
    let space = m.grid.space();
    let per_slice: Vec<SliceNorms> = (0..m.n_slices())
        .map(|k| slice_norms(&space, m.slice(k), p))
        .collect();
    let dt = m.grid.dt();
    let last = per_slice.len() - 1;
    let trap = |f: &dyn Fn(&SliceNorms) -> f64| -> f64 {
        per_slice
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let w = if k == 0 || k == last { 0.5 } else { 1.0 };
                w * f(s) * dt
            })
            .sum()
    };
    let l1_kappa = trap(&|s| s.l1_kappa);
    let lp = trap(&|s| s.lp.powf(p)).powf(1.0 / p);
    let quadratic_moment = trap(&|s| s.quadratic_moment);
    WeightedNorms {
        per_slice,
        l1_kappa,
        lp,
        quadratic_moment,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
    }

    fn random_momentum(grid: GridSpec, seed: &mut u64) -> MomentumField {
        let mut w = MomentumField::zeros(grid);
        for comp in w.comps.iter_mut() {
            comp.iter_mut().for_each(|v| *v = lcg(seed));
        }
        w.zero_boundary();
        w
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(1, 1, 8, 1.0).is_err());
        assert!(GridSpec::new(1, 4, 3, 1.0).is_err());
        assert!(GridSpec::new(3, 4, 8, 1.0).is_err());
        assert!(GridSpec::new(2, 4, 8, -1.0).is_err());
        let g = GridSpec::new(2, 4, 8, 2.0).unwrap();
        assert_eq!(g.n_cells(), 64);
        assert!((g.dx() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn face_indexing_covers_all_faces() {
        let s = SpaceGrid::new(2, 5, 1.0).unwrap();
        for a in 0..2 {
            let mut seen = vec![0usize; s.n_faces(a)];
            for c in 0..s.n_cells() {
                let (lo, hi) = s.cell_faces(a, c);
                seen[lo] += 1;
                seen[hi] += 1;
            }
            for (f, count) in seen.iter().enumerate() {
                let expected = if s.is_boundary_face(a, f) { 1 } else { 2 };
                assert_eq!(*count, expected, "axis {a} face {f}");
            }
        }
    }

    #[test]
    fn stationary_flow_has_zero_residual() {
        let g = GridSpec::new(2, 4, 6, 1.0).unwrap();
        let mut m = DensityField::zeros(g);
        m.data.iter_mut().for_each(|v| *v = 1.0);
        let w = MomentumField::zeros(g);
        let r = continuity_residual(&m, &w).unwrap();
        assert_eq!(r.max_abs(), 0.0);
    }

    #[test]
    fn advected_box_has_small_residual() {
        // m(t,x) = m0(x - c t) with matching upwind flux.
        let (nt, nx, r) = (40, 80, 2.0);
        let g = GridSpec::new(1, nt, nx, r).unwrap();
        let c = 0.5;
        let bump = |x: f64| (-(x / 0.3).powi(2)).exp();
        let space = g.space();
        let mut m = DensityField::zeros(g);
        for k in 0..=nt {
            let t = g.node_time(k);
            for i in 0..nx {
                m.slice_mut(k)[i] = bump(space.center_coord(i) + 0.5 - c * t);
            }
        }
        let mut w = MomentumField::zeros(g);
        for k in 0..nt {
            let t = g.cell_time(k);
            for f in 1..nx {
                w.faces_mut(0, k)[f] = c * bump(space.face_coord(f) + 0.5 - c * t);
            }
        }
        let res = continuity_residual(&m, &w).unwrap();
        // Second-order truncation: well below the O(1) derivative scale.
        assert!(res.max_abs() < 0.05, "residual {}", res.max_abs());
    }

    #[test]
    fn interpolation_constant_and_linear() {
        let g = GridSpec::new(1, 3, 8, 1.0).unwrap();
        let space = g.space();
        let mut w = MomentumField::zeros(g);
        for k in 0..3 {
            for f in 1..8 {
                w.faces_mut(0, k)[f] = 2.0 * space.face_coord(f) + 1.0;
            }
        }
        let c = interp_face_to_center(&w);
        // Interior cells reproduce the linear function exactly.
        for k in 0..3 {
            for i in 1..7 {
                let expect = 2.0 * space.center_coord(i) + 1.0;
                assert!((c.comps[0].slice(k)[i] - expect).abs() < 1e-14);
            }
        }
        let s = CellVectorField {
            grid: g,
            comps: vec![ScalarField::constant(g, 3.0)],
        };
        let f = interp_center_to_face(&s);
        for k in 0..3 {
            for fi in 1..8 {
                assert_eq!(f.faces(0, k)[fi], 3.0);
            }
            assert_eq!(f.faces(0, k)[0], 0.0);
        }
    }

    #[test]
    fn face_center_interpolation_is_adjoint() {
        for d in 1..=2 {
            let g = GridSpec::new(d, 5, 7, 1.0).unwrap();
            let mut seed = 17 + d as u64;
            let w = random_momentum(g, &mut seed);
            let mut s = CellVectorField::zeros(g);
            for comp in s.comps.iter_mut() {
                comp.data.iter_mut().for_each(|v| *v = lcg(&mut seed));
            }
            let iw = interp_face_to_center(&w);
            let its = interp_center_to_face(&s);
            let lhs: f64 = (0..d)
                .map(|a| iw.comps[a].data.iter().zip(&s.comps[a].data).map(|(x, y)| x * y).sum::<f64>())
                .sum();
            let rhs: f64 = (0..d)
                .map(|a| w.comps[a].iter().zip(&its.comps[a]).map(|(x, y)| x * y).sum::<f64>())
                .sum();
            assert!((lhs - rhs).abs() < 1e-12, "d={d}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn discrete_integration_by_parts() {
        // <div w, s> = -<w, grad s> with grad s on interior faces.
        let g = GridSpec::new(2, 3, 6, 1.0).unwrap();
        let space = g.space();
        let mut seed = 5;
        let w = random_momentum(g, &mut seed);
        let s: Vec<f64> = (0..space.n_cells()).map(|_| lcg(&mut seed)).collect();
        let dx = g.dx();
        for k in 0..g.nt {
            let mut div_s = 0.0;
            for c in 0..space.n_cells() {
                let mut div = 0.0;
                for a in 0..2 {
                    let (lo, hi) = space.cell_faces(a, c);
                    div += (w.faces(a, k)[hi] - w.faces(a, k)[lo]) / dx;
                }
                div_s += div * s[c];
            }
            let mut w_grad = 0.0;
            for a in 0..2 {
                for c in 0..space.n_cells() {
                    let (_, hi) = space.cell_faces(a, c);
                    let mut idx = space.multi_index(c);
                    if idx[a] + 1 < space.nx {
                        idx[a] += 1;
                        let c2 = space.flat_index(idx);
                        w_grad += w.faces(a, k)[hi] * (s[c2] - s[c]) / dx;
                    }
                }
            }
            assert!((div_s + w_grad).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_density_adjoint_pair() {
        let g = GridSpec::new(1, 6, 5, 1.0).unwrap();
        let mut seed = 99;
        let mut m = DensityField::zeros(g);
        m.data.iter_mut().for_each(|v| *v = lcg(&mut seed));
        let mut s = ScalarField::zeros(g);
        s.data.iter_mut().for_each(|v| *v = lcg(&mut seed));
        let lhs: f64 = centered_density(&m).data.iter().zip(&s.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = m.data.iter().zip(&centered_density_adjoint(&s).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn uniform_quadratic_moment() {
        let space = SpaceGrid::new(1, 200, 1.0).unwrap();
        let d = Density::uniform(space);
        let n = slice_norms(&space, &d.values, 2.0);
        assert!((n.mass - 1.0).abs() < 1e-12);
        assert!((n.quadratic_moment - 1.0 / 3.0).abs() < 1e-4);
        assert!((n.l1_kappa - (1.0 + n.quadratic_moment)).abs() < 1e-12);
    }

    #[test]
    fn single_cell_moment() {
        let space = SpaceGrid::new(2, 8, 2.0).unwrap();
        let mut values = vec![0.0; space.n_cells()];
        let c = space.flat_index([6, 1]);
        values[c] = 1.0 / space.cell_volume();
        let n = slice_norms(&space, &values, 2.0);
        let x = space.cell_center(c);
        assert!((n.quadratic_moment - (x[0] * x[0] + x[1] * x[1])).abs() < 1e-12);
    }

    #[test]
    fn bilinear_interpolation_reproduces_linear_data() {
        let space = SpaceGrid::new(2, 10, 1.0).unwrap();
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - 0.5 * x[1];
        let values: Vec<f64> = (0..space.n_cells())
            .map(|c| f(&space.cell_center(c)))
            .collect();
        for &(a, b) in &[(0.13, -0.41), (-0.8, 0.2), (0.0, 0.0)] {
            let v = space.interpolate(&values, &[a, b]);
            assert!((v - f(&[a, b])).abs() < 1e-12);
        }
    }
}
