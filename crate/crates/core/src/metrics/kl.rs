//! Kantorovich-Lebesgue costs
//! `KL^(a)(m0, m1) = inf int (a/2)|v|^2 m + (m + m^p) / (2a)` and their infimum over `a`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quantile::w2_1d;
use crate::error::{Error, Result};
use crate::grid::{Density, GridSpec};
use crate::model::ModelSpec;
use crate::primal::{solve_planning, Solution, SolverConfig};

pub fn kl_model(a: f64, p: f64) -> ModelSpec {
    ModelSpec::kl(a, p)
}

/// Full solver output for `KL^(a)`.
pub fn kl_solve(m0: &Density, m1: &Density, a: f64, p: f64, grid: GridSpec, config: &SolverConfig) -> Result<Solution> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("KL weight a = {a} must be positive")));
    }
    solve_planning(&kl_model(a, p), grid, m0, m1, config)
}

/// The action of the computed flow for `KL^(a)`.
pub fn kl_cost(m0: &Density, m1: &Density, a: f64, p: f64, grid: GridSpec, config: &SolverConfig) -> Result<KlEntry> {
    let sol = kl_solve(m0, m1, a, p, grid, config)?;
    let last = sol.final_entry().copied();
    Ok(KlEntry {
        a,
        cost: last.map_or(f64::NAN, |e| e.primal),
        upper_bound: kl_upper_bound(m0, m1, a, p),
        rel_gap: last.map_or(f64::NAN, |e| e.rel_gap),
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// `1/(2a) + int a|x|^2 (m0 + m1) + (m0^p + m1^p) / (4a)`.
pub fn kl_upper_bound(m0: &Density, m1: &Density, a: f64, p: f64) -> f64 {
    let space = m0.space;
    let d = space.d;
    let integral: f64 = (0..space.n_cells())
        .map(|c| {
            let x = space.cell_center(c);
            let r2: f64 = x[..d].iter().map(|v| v * v).sum();
            let (u, v) = (m0.values[c], m1.values[c]);
            a * r2 * (u + v) + (u.powf(p) + v.powf(p)) / (4.0 * a)
        })
        .sum::<f64>()
        * space.cell_volume();
    1.0 / (2.0 * a) + integral
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlEntry {
    pub a: f64,
    pub cost: f64,
    pub upper_bound: f64,
    pub rel_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    /// Grid evaluations followed by refinement evaluations, in order.
    pub costs: Vec<KlEntry>,
    pub d_kl: f64,
    pub argmin_a: f64,
    /// `W_2(m0, m1)` when `d = 1`.
    pub w2: Option<f64>,
}

/// Golden-section steps used by [`kl_distance`] when refining.
pub const REFINE_STEPS: usize = 8;

/// `min_a KL^(a)` over `a_grid`, optionally refined by golden-section search in
/// `log a` between the neighbors of the best grid value.
pub fn kl_distance(
    m0: &Density,
    m1: &Density,
    p: f64,
    a_grid: &[f64],
    refine: bool,
    grid: GridSpec,
    config: &SolverConfig,
) -> Result<KlReport> {
    if a_grid.is_empty() {
        return Err(Error::Invalid("empty a grid".into()));
    }
    let mut sorted = a_grid.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sorted.dedup();
    let mut costs: Vec<KlEntry> = sorted
        .par_iter()
        .map(|&a| kl_cost(m0, m1, a, p, grid, config))
        .collect::<Result<_>>()?;

    let best = (0..costs.len())
        .min_by(|&i, &j| costs[i].cost.partial_cmp(&costs[j].cost).unwrap())
        .unwrap();
    if refine {
        let lo = if best > 0 { sorted[best - 1] } else { sorted[best] / 2.0 };
        let hi = if best + 1 < sorted.len() { sorted[best + 1] } else { sorted[best] * 2.0 };
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        let (mut x0, mut x3) = (lo.ln(), hi.ln());
        let mut x1 = x3 - golden * (x3 - x0);
        let mut x2 = x0 + golden * (x3 - x0);
        let mut f1 = kl_cost(m0, m1, x1.exp(), p, grid, config)?;
        let mut f2 = kl_cost(m0, m1, x2.exp(), p, grid, config)?;
        costs.push(f1);
        costs.push(f2);
        for _ in 2..REFINE_STEPS {
            if f1.cost <= f2.cost {
                x3 = x2;
                x2 = x1;
                f2 = f1;
                x1 = x3 - golden * (x3 - x0);
                f1 = kl_cost(m0, m1, x1.exp(), p, grid, config)?;
                costs.push(f1);
            } else {
                x0 = x1;
                x1 = x2;
                f1 = f2;
                x2 = x0 + golden * (x3 - x0);
                f2 = kl_cost(m0, m1, x2.exp(), p, grid, config)?;
                costs.push(f2);
            }
        }
    }
    let arg = costs
        .iter()
        .min_by(|x, y| x.cost.partial_cmp(&y.cost).unwrap())
        .copied()
        .unwrap();
    let w2 = if m0.space.d == 1 { Some(w2_1d(m0, m1)?) } else { None };
    Ok(KlReport { costs, d_kl: arg.cost, argmin_a: arg.a, w2 })
}
