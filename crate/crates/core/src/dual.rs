//! Dual pair `(u, alpha)`, dual energy, Hamilton-Jacobi residual and the
//! optimality certificate of a computed flow.
//!
//! `u` lives on space-time cell centers. Its traces at `t = 0` and `t = 1` are
//! kept separately: at a fixed point of the splitting the exact discrete duality
//! `B = A` holds with
//!
//! ```text
//! u(0) = u_first + dt/2 sigma_m(first),   u(1) = u_last - dt/2 sigma_m(last)
//! ```
//!
//! and the plain first/last slices would be off by `O(dt)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    centered_density, continuity_residual, weighted_norms, DensityField, GridSpec,
    ScalarField, SliceNorms,
};
use crate::model::{LocalModel, ModelSpec};
use crate::primal::{action, SaddleState, Solution};

#[derive(Clone, Debug, PartialEq)]
pub struct DualPair {
    pub u: ScalarField,
    pub alpha: ScalarField,
    pub trace0: Vec<f64>,
    pub trace1: Vec<f64>,
}

impl DualPair {
    /// Pair whose traces are the first and last time slices of `u`.
    pub fn from_fields(u: ScalarField, alpha: ScalarField) -> Result<Self> {
        if u.grid != alpha.grid {
            return Err(Error::Shape("u and alpha live on different grids".into()));
        }
        let nt = u.grid.nt;
        let trace0 = u.slice(0).to_vec();
        let trace1 = u.slice(nt - 1).to_vec();
        Ok(DualPair { u, alpha, trace0, trace1 })
    }

    pub fn grid(&self) -> GridSpec {
        self.u.grid
    }

    /// Adds `c` to `u` and both traces.
    pub fn shift(&mut self, c: f64) {
        self.u.data.iter_mut().for_each(|v| *v += c);
        self.trace0.iter_mut().for_each(|v| *v += c);
        self.trace1.iter_mut().for_each(|v| *v += c);
    }

    /// Shifts `u` so that `int u(1, .) m1 = 0`.
    pub fn fix_gauge(&mut self, m1: &[f64]) {
        let vol = self.grid().space().cell_volume();
        let mass: f64 = m1.iter().sum::<f64>() * vol;
        if mass > 0.0 {
            let c: f64 = self.trace1.iter().zip(m1).map(|(u, m)| u * m).sum::<f64>() * vol / mass;
            self.shift(-c);
        }
    }
}

/// `alpha <- max(alpha, f(x, 0))`.
pub fn clamp_alpha(model: &ModelSpec, alpha: &mut ScalarField) {
    let samples = model.sample(&alpha.grid.space());
    let n = alpha.grid.n_cells();
    for (idx, a) in alpha.data.iter_mut().enumerate() {
        *a = a.max(samples[idx % n].f_unchecked(0.0));
    }
}

/// Dual pair from the splitting state: `alpha = max(f(x, m), sigma_m + H(x, -sigma_w))`
/// clamped below by `f(x, 0)`; `u` gauged by `int u(1) m1 = 0`.
pub fn assemble_dual(model: &ModelSpec, m: &DensityField, saddle: &SaddleState) -> DualPair {
    let grid = m.grid;
    let n = grid.n_cells();
    let samples = model.sample(&grid.space());
    let m_bar = centered_density(m);
    let mut alpha = ScalarField::zeros(grid);
    for (idx, a) in alpha.data.iter_mut().enumerate() {
        let l = &samples[idx % n];
        let mut sw = [0.0; 2];
        for (i, comp) in saddle.sigma_w.comps.iter().enumerate() {
            sw[i] = -comp.data[idx];
        }
        let implied = saddle.sigma_m.data[idx] + l.hamiltonian(&sw);
        *a = implied.max(l.f_unchecked(m_bar.data[idx].max(0.0)));
    }
    clamp_alpha(model, &mut alpha);

    let u = saddle.u_raw.clone();
    let half = 0.5 * grid.dt();
    let trace0 = u
        .slice(0)
        .iter()
        .zip(saddle.sigma_m.slice(0))
        .map(|(u, s)| u + half * s)
        .collect();
    let trace1 = u
        .slice(grid.nt - 1)
        .iter()
        .zip(saddle.sigma_m.slice(grid.nt - 1))
        .map(|(u, s)| u - half * s)
        .collect();
    let mut pair = DualPair { u, alpha, trace0, trace1 };
    pair.fix_gauge(m.slice(grid.nt));
    pair
}

/// The dual pair of a solution; rebuilt from the splitting state when present.
pub fn recover_dual(model: &ModelSpec, solution: &Solution) -> DualPair {
    match &solution.saddle {
        Some(saddle) => assemble_dual(model, &solution.m, saddle),
        None => solution.dual.clone(),
    }
}

/// `A = int u(0) m0 - int u(1) m1 - int_Q F*(x, alpha)`.
pub fn dual_energy(model: &ModelSpec, dual: &DualPair, m0: &[f64], m1: &[f64]) -> Result<f64> {
    let grid = dual.grid();
    let n = grid.n_cells();
    if m0.len() != n || m1.len() != n || dual.trace0.len() != n || dual.trace1.len() != n {
        return Err(Error::Shape("dual_energy: slice lengths differ from the grid".into()));
    }
    let samples = model.sample(&grid.space());
    let vol = grid.space().cell_volume();
    let ends: f64 = (0..n).map(|c| dual.trace0[c] * m0[c] - dual.trace1[c] * m1[c]).sum::<f64>() * vol;
    let fstar: f64 = dual
        .alpha
        .data
        .iter()
        .enumerate()
        .map(|(idx, a)| samples[idx % n].big_f_star(*a))
        .sum::<f64>()
        * grid.cell_measure();
    Ok(ends - fstar)
}

/// Spatial gradient of `u` per cell: centered differences, one-sided at the walls.
pub fn spatial_gradient(u: &ScalarField) -> Vec<[f64; 2]> {
    let grid = u.grid;
    let space = grid.space();
    let n = grid.n_cells();
    let dx = grid.dx();
    let mut out = vec![[0.0; 2]; u.data.len()];
    for k in 0..grid.nt {
        let s = u.slice(k);
        for c in 0..n {
            let idx = space.multi_index(c);
            for a in 0..grid.d {
                let mut lo = idx;
                let mut hi = idx;
                let mut span = 2.0;
                if idx[a] == 0 {
                    hi[a] += 1;
                    span = 1.0;
                } else if idx[a] + 1 == grid.nx {
                    lo[a] -= 1;
                    span = 1.0;
                } else {
                    lo[a] -= 1;
                    hi[a] += 1;
                }
                out[k * n + c][a] = (s[space.flat_index(hi)] - s[space.flat_index(lo)]) / (span * dx);
            }
        }
    }
    out
}

/// `d_t u` per cell, dual to the node averaging of the staggered layout.
///
/// The values `D_k` are the unique cell sequence whose node averages equal the
/// node differences of `u`: `D_0 = (u_0 - u(0)) / (dt/2)` from the trace and
/// `(D_{k-1} + D_k) / 2 = (u_k - u_{k-1}) / dt` at interior nodes. This is
/// first-order consistent for smooth `u` and reproduces the time part of the
/// saddle point exactly, so the residual measures the optimization error
/// rather than the smoothing of `alpha`.
pub fn time_derivative(dual: &DualPair) -> ScalarField {
    let grid = dual.grid();
    let n = grid.n_cells();
    let dt = grid.dt();
    let mut out = ScalarField::zeros(grid);
    for c in 0..n {
        let mut prev = (dual.u.slice(0)[c] - dual.trace0[c]) / (0.5 * dt);
        out.data[c] = prev;
        for k in 1..grid.nt {
            let next = 2.0 * (dual.u.slice(k)[c] - dual.u.slice(k - 1)[c]) / dt - prev;
            out.data[k * n + c] = next;
            prev = next;
        }
    }
    out
}

/// `(-d_t u + H(x, D u) - alpha)_+` per cell.
pub fn hj_residual(model: &ModelSpec, dual: &DualPair) -> ScalarField {
    let grid = dual.grid();
    let n = grid.n_cells();
    let samples = model.sample(&grid.space());
    let du = spatial_gradient(&dual.u);
    let dtu = time_derivative(dual);
    let mut out = ScalarField::zeros(grid);
    for (idx, r) in out.data.iter_mut().enumerate() {
        let l: &LocalModel = &samples[idx % n];
        *r = (-dtu.data[idx] + l.hamiltonian(&du[idx]) - dual.alpha.data[idx]).max(0.0);
    }
    out
}

/// Certificate quantities of a flow and a dual pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub gap: f64,
    pub rel_gap: f64,
    pub yh_integral: f64,
    pub yf_integral: f64,
    /// `int (-d_t u + H(x, Du) - alpha)_+` over all of `Q`.
    pub hj_violation: f64,
    /// The same integral restricted to cells with `m > delta`.
    pub hj_violation_support: f64,
    pub defect_mass: f64,
    pub identity_error: f64,
    pub continuity_residual: f64,
    pub boundary_flux: f64,
    pub min_density: f64,
    pub min_alpha_slack: f64,
    pub delta: f64,
    pub masked_cells: usize,
    pub per_slice: Vec<SliceNorms>,
    pub boundary_mass: Vec<f64>,
}

pub fn duality_report(model: &ModelSpec, solution: &Solution) -> Result<DiagnosticsReport> {
    let grid = solution.grid;
    let space = grid.space();
    let n = grid.n_cells();
    let h = grid.cell_measure();
    let dual = &solution.dual;
    if dual.grid() != grid {
        return Err(Error::Shape("dual pair and flow live on different grids".into()));
    }
    let samples = model.sample(&space);
    let vel = &solution.velocity;
    let m_bar = centered_density(&solution.m);

    let b = action(model, &solution.m, &solution.w, vel.delta);
    let m0 = solution.m.slice(0);
    let m1 = solution.m.slice(grid.nt);
    let a = dual_energy(model, dual, m0, m1)?;
    let gap = b - a;

    let du = spatial_gradient(&dual.u);
    let hj = hj_residual(model, dual);
    let (mut yh, mut yf, mut hj_all, mut hj_supp) = (0.0, 0.0, 0.0, 0.0);
    let mut min_alpha_slack = f64::INFINITY;
    for idx in 0..m_bar.data.len() {
        let l = &samples[idx % n];
        let mb = m_bar.data[idx].max(0.0);
        let alpha = dual.alpha.data[idx];
        yf += l.gap_yf_unchecked(mb, alpha);
        hj_all += hj.data[idx];
        min_alpha_slack = min_alpha_slack.min(alpha - l.f_unchecked(0.0));
        if vel.valid[idx] {
            yh += l.gap_yh(&du[idx], &vel.v.at(idx)) * mb;
            hj_supp += hj.data[idx];
        }
    }
    yh *= h;
    yf *= h;
    hj_all *= h;
    hj_supp *= h;
    let defect_mass = gap - yh - yf;
    let identity_error = (defect_mass + yh + yf - gap).abs();
    debug_assert!(identity_error <= 1e-9 * (1.0 + gap.abs()));

    let residual = continuity_residual(&solution.m, &solution.w)?;
    let norms = weighted_norms(&solution.m, model.p);
    let boundary_mass = (0..=grid.nt).map(|k| space.boundary_mass(solution.m.slice(k))).collect();
    Ok(DiagnosticsReport {
        b,
        a,
        gap,
        rel_gap: gap.abs() / b.abs().max(1.0),
        yh_integral: yh,
        yf_integral: yf,
        hj_violation: hj_all,
        hj_violation_support: hj_supp,
        defect_mass,
        identity_error,
        continuity_residual: residual.max_abs(),
        boundary_flux: solution.w.max_boundary_flux(),
        min_density: solution.m.data.iter().fold(f64::INFINITY, |acc, v| acc.min(*v)),
        min_alpha_slack,
        delta: vel.delta,
        masked_cells: vel.valid.iter().filter(|v| !**v).count(),
        per_slice: norms.per_slice,
        boundary_mass,
    })
}
