use serde::{Deserialize, Serialize};

use super::{action_per_slice, Solution};
use crate::grid::{centered_density, interp_face_to_center, slice_norms};
use crate::model::ModelSpec;

/// Integrability and moment bounds of a computed flow, next to the bounds the
/// structural constants predict for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AprioriReport {
    /// `int |v|^2 m + m^p` over `Q`.
    pub kinetic_plus_lp: f64,
    /// `E = c (B + C_F + c_H^+ M)` with `c = 2 max(c_H, p c_f^p)`.
    pub energy_bound: f64,
    /// `int (1 + |x|) m`.
    pub first_moment_mass: f64,
    /// `|m v|` in the discrete `L^{2p/(p+1)}(Q)` norm (unmasked cells).
    pub w_norm: f64,
    /// `|m|_p^{1/2} (int |v|^2 m)^{1/2}`.
    pub holder_bound: f64,
    /// `M(t) = (int |x|^2 m_t)^{1/2}` per time node.
    pub moments: Vec<f64>,
    /// Bound on `1 + M(t)` from the endpoint moments and the action.
    pub moment_bound: f64,
    pub finite: bool,
    pub energy_ok: bool,
    pub holder_ok: bool,
    pub moments_ok: bool,
}

impl AprioriReport {
    pub fn all_ok(&self) -> bool {
        self.finite && self.energy_ok && self.holder_ok && self.moments_ok
    }
}

pub fn apriori_check(model: &ModelSpec, solution: &Solution) -> AprioriReport {
    let grid = solution.grid;
    let space = grid.space();
    let n = grid.n_cells();
    let h = grid.cell_measure();
    let p = model.p;
    let q = model.q();
    let samples = model.sample(&space);
    let c = model.constants;

    let m_bar = centered_density(&solution.m);
    let w_bar = interp_face_to_center(&solution.w);
    let vel = &solution.velocity;
    let r = 2.0 * p / (p + 1.0);
    let (mut kinetic, mut lp, mut wr, mut first) = (0.0, 0.0, 0.0, 0.0);
    for (idx, &mb) in m_bar.data.iter().enumerate() {
        let mb = mb.max(0.0);
        let x = space.cell_center(idx % n);
        let radius = x[..grid.d].iter().map(|v| v * v).sum::<f64>().sqrt();
        first += (1.0 + radius) * mb;
        lp += mb.powf(p);
        if vel.valid[idx] {
            let wv = w_bar.at(idx);
            wr += (wv[0] * wv[0] + wv[1] * wv[1]).sqrt().powf(r);
            let v = vel.v.at(idx);
            kinetic += (v[0] * v[0] + v[1] * v[1]) * mb;
        }
    }
    kinetic *= h;
    lp *= h;
    first *= h;
    let w_norm = (wr * h).powf(1.0 / r);
    let holder_bound = lp.powf(0.5 / p) * kinetic.sqrt();

    let per_slice = action_per_slice(model, &solution.m, &solution.w, vel.delta);
    let b_total: f64 = per_slice.iter().sum::<f64>() * grid.dt();
    let b_pos: f64 = per_slice.iter().map(|b| b.max(0.0)).sum::<f64>() * grid.dt();

    let vol = space.cell_volume();
    let c_f_norm = samples.iter().map(|l| l.v_f.abs().powf(q)).sum::<f64>() * vol;
    let c_f_norm = c_f_norm.powf(1.0 / q);
    let big_c_f = (2.0 * c.c_f * c_f_norm).powf(q) / q;
    let cst = 2.0 * c.c_h.max(p * c.c_f.powf(p));
    let energy_bound = cst * (b_total.max(0.0) + big_c_f + c.c_h_plus * first);

    let moments: Vec<f64> = (0..=grid.nt)
        .map(|k| slice_norms(&space, solution.m.slice(k), p).quadratic_moment.max(0.0).sqrt())
        .collect();
    let m0_sq = moments[0].powi(2);
    let m1_sq = moments[grid.nt].powi(2);
    let c3 = big_c_f + 0.5 * c.c_h_plus * c.c_h_plus;
    let moment_bound = 1.0 + std::f64::consts::E * (m0_sq + m1_sq + 2.0 * c.c_h * (c3 + b_pos)).sqrt();

    let total = kinetic + lp;
    let finite = total.is_finite() && w_norm.is_finite() && moments.iter().all(|v| v.is_finite());
    AprioriReport {
        kinetic_plus_lp: total,
        energy_bound,
        first_moment_mass: first,
        w_norm,
        holder_bound,
        energy_ok: total <= energy_bound * (1.0 + 1e-12),
        holder_ok: w_norm <= holder_bound * (1.0 + 1e-12) + 1e-300,
        moments_ok: moments.iter().all(|mt| 1.0 + mt <= moment_bound),
        moments,
        moment_bound,
        finite,
    }
}
