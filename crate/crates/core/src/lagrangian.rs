//! Particles and characteristics of a computed flow.
//!
//! Particles drawn from `m0` are pushed through the recovered velocity field.
//! Along each path we accumulate the kinetic energy and the modified
//! Lagrangian cost `int L(g, g') + alpha(t, g) dt`, which at optimality equals
//! `u(0, g(0)) - u(1, g(1))` on characteristics and bounds it from above on any
//! other path.
//!
//! Fields are read with linear interpolation in time between cell-center times
//! and (bi)linear interpolation in space between cell centers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Density, GridSpec, Point, SpaceGrid};
use crate::metrics::{w1_empirical, QuantileFn};
use crate::model::ModelSpec;
use crate::primal::Solution;

/// Bump perturbations tried per traced path by [`path_optimality_check`].
pub const PERTURBATIONS_PER_PATH: usize = 20;
/// Allowed improvement of a perturbed path over the traced one.
pub const PERTURBATION_TOL: f64 = 1e-3;
/// Masked fraction above which a path is flagged low-confidence.
pub const MASKED_LIMIT: f64 = 0.1;
/// Times at which [`verify_superposition`] compares slices.
pub const CHECK_TIMES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: usize,
    /// Uniform nodes `i / steps`.
    pub times: Vec<f64>,
    pub positions: Vec<Point>,
    /// `int |g'|^2 dt`.
    pub energy: f64,
    /// `int L(g, g') + alpha(t, g) dt`.
    pub path_cost: f64,
    /// Running value of `path_cost` at every node.
    pub cost_so_far: Vec<f64>,
    /// The path hit the wall and was clamped.
    pub clamped: bool,
    /// Fraction of steps spent in cells with `m <= delta`.
    pub masked_fraction: f64,
    pub low_confidence: bool,
}

impl Trajectory {
    pub fn start(&self) -> Point {
        self.positions[0]
    }

    pub fn end(&self) -> Point {
        *self.positions.last().expect("trajectory has nodes")
    }

    /// Position at node time `t` (nearest node).
    pub fn at(&self, t: f64) -> Point {
        let steps = self.positions.len() - 1;
        let i = (t * steps as f64).round().clamp(0.0, steps as f64) as usize;
        self.positions[i]
    }
}

/// Read-only view of the fields of a solution at arbitrary `(t, x)`.
struct Sampler<'a> {
    grid: GridSpec,
    space: SpaceGrid,
    solution: &'a Solution,
}

impl<'a> Sampler<'a> {
    fn new(solution: &'a Solution) -> Self {
        let grid = solution.grid;
        Sampler { grid, space: grid.space(), solution }
    }

    /// Lower time cell and weight between cell-center times.
    fn time_bracket(&self, t: f64) -> (usize, usize, f64) {
        let nt = self.grid.nt;
        let s = t / self.grid.dt() - 0.5;
        if nt == 1 || s <= 0.0 {
            (0, 0, 0.0)
        } else if s >= (nt - 1) as f64 {
            (nt - 1, nt - 1, 0.0)
        } else {
            let k = s.floor() as usize;
            (k, k + 1, s - k as f64)
        }
    }

    fn cell_field(&self, data: &[f64], t: f64, x: &[f64]) -> f64 {
        let n = self.grid.n_cells();
        let (k0, k1, a) = self.time_bracket(t);
        let lo = self.space.interpolate(&data[k0 * n..(k0 + 1) * n], x);
        if a == 0.0 {
            return lo;
        }
        let hi = self.space.interpolate(&data[k1 * n..(k1 + 1) * n], x);
        (1.0 - a) * lo + a * hi
    }

    fn velocity(&self, t: f64, x: &Point) -> Point {
        let mut v = [0.0; 2];
        for (a, comp) in self.solution.velocity.v.comps.iter().enumerate() {
            v[a] = self.cell_field(&comp.data, t, &x[..self.space.d]);
        }
        v
    }

    fn alpha(&self, t: f64, x: &Point) -> f64 {
        self.cell_field(&self.solution.dual.alpha.data, t, &x[..self.space.d])
    }

    fn masked(&self, t: f64, x: &Point) -> bool {
        let k = ((t / self.grid.dt()).floor() as usize).min(self.grid.nt - 1);
        let c = self.space.cell_of(&x[..self.space.d]);
        !self.solution.velocity.valid[k * self.grid.n_cells() + c]
    }

    fn u0(&self, x: &Point) -> f64 {
        self.space.interpolate(&self.solution.dual.trace0, &x[..self.space.d])
    }

    fn u1(&self, x: &Point) -> f64 {
        self.space.interpolate(&self.solution.dual.trace1, &x[..self.space.d])
    }

    /// Clamps into the closed box; reports whether anything moved.
    fn clamp(&self, x: &mut Point) -> bool {
        let r = self.space.r;
        let mut hit = false;
        for c in x.iter_mut().take(self.space.d) {
            if *c < -r || *c > r {
                *c = c.clamp(-r, r);
                hit = true;
            }
        }
        hit
    }
}

fn axpy(x: &Point, h: f64, v: &Point) -> Point {
    [x[0] + h * v[0], x[1] + h * v[1]]
}

/// Energy, total cost and running cost of a polygonal path on uniform nodes.
/// Each segment uses its own velocity and the trapezoid rule for `L + alpha`.
fn path_action(model: &ModelSpec, sampler: &Sampler, times: &[f64], positions: &[Point]) -> (f64, f64, Vec<f64>) {
    let d = sampler.space.d;
    let mut energy = 0.0;
    let mut cost = 0.0;
    let mut running = Vec::with_capacity(positions.len());
    running.push(0.0);
    for i in 0..positions.len() - 1 {
        let h = times[i + 1] - times[i];
        let (a, b) = (&positions[i], &positions[i + 1]);
        let vel = [(b[0] - a[0]) / h, (b[1] - a[1]) / h];
        energy += (vel[0] * vel[0] + vel[1] * vel[1]) * h;
        let la = model.at(&a[..d]).lagrangian(&vel[..d]) + sampler.alpha(times[i], a);
        let lb = model.at(&b[..d]).lagrangian(&vel[..d]) + sampler.alpha(times[i + 1], b);
        cost += 0.5 * (la + lb) * h;
        running.push(cost);
    }
    (energy, cost, running)
}

fn uniform_times(steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

fn trace_with(model: &ModelSpec, sampler: &Sampler, id: usize, x0: Point, steps: usize) -> Trajectory {
    let h = 1.0 / steps as f64;
    let times = uniform_times(steps);
    let mut positions = Vec::with_capacity(steps + 1);
    let mut x = x0;
    positions.push(x);
    let mut clamped = false;
    let mut masked = 0usize;
    for i in 0..steps {
        let t = times[i];
        if sampler.masked(t + 0.5 * h, &x) {
            masked += 1;
        }
        let k1 = sampler.velocity(t, &x);
        let k2 = sampler.velocity(t + 0.5 * h, &axpy(&x, 0.5 * h, &k1));
        let k3 = sampler.velocity(t + 0.5 * h, &axpy(&x, 0.5 * h, &k2));
        let k4 = sampler.velocity(t + h, &axpy(&x, h, &k3));
        for a in 0..2 {
            x[a] += h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
        }
        clamped |= sampler.clamp(&mut x);
        positions.push(x);
    }
    let (energy, path_cost, cost_so_far) = path_action(model, sampler, &times, &positions);
    let masked_fraction = masked as f64 / steps as f64;
    Trajectory {
        id,
        times,
        positions,
        energy,
        path_cost,
        cost_so_far,
        clamped,
        masked_fraction,
        low_confidence: masked_fraction > MASKED_LIMIT,
    }
}

fn check_point(space: &SpaceGrid, x: &Point) -> Result<()> {
    if x[..space.d].iter().any(|c| !c.is_finite() || c.abs() > space.r) {
        return Err(Error::Domain(format!("start point {:?} lies outside the box", &x[..space.d])));
    }
    Ok(())
}

/// RK4 characteristic `g' = v(t, g)` from `x0` with `steps` uniform steps.
pub fn trace_characteristic(model: &ModelSpec, solution: &Solution, x0: Point, steps: usize) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Invalid("need at least one time step".into()));
    }
    let sampler = Sampler::new(solution);
    check_point(&sampler.space, &x0)?;
    Ok(trace_with(model, &sampler, 0, x0, steps))
}

/// Traces every start point in parallel; trajectory ids follow the input order.
pub fn trace_ensemble(model: &ModelSpec, solution: &Solution, starts: &[Point], steps: usize) -> Result<Vec<Trajectory>> {
    if steps == 0 {
        return Err(Error::Invalid("need at least one time step".into()));
    }
    let sampler = Sampler::new(solution);
    for x in starts {
        check_point(&sampler.space, x)?;
    }
    if !model.is_nonnegative_on(&sampler.space) {
        log::warn!("model has negative potentials; path costs may be negative");
    }
    Ok(starts
        .par_iter()
        .enumerate()
        .map(|(id, x)| trace_with(model, &sampler, id, *x, steps))
        .collect())
}

/// I.i.d. samples of the piecewise-constant density `m0`.
pub fn sample_particles(m0: &Density, n: usize, seed: u64) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(Error::Invalid("need at least one particle".into()));
    }
    let space = m0.space;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if space.d == 1 {
        let q = QuantileFn::new(m0)?;
        return Ok((0..n).map(|_| [q.eval(rng.gen::<f64>()), 0.0]).collect());
    }
    if m0.values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Domain("density has negative or non-finite entries".into()));
    }
    let mut cumulative = Vec::with_capacity(m0.values.len());
    let mut acc = 0.0;
    for v in &m0.values {
        acc += v;
        cumulative.push(acc);
    }
    if acc <= 0.0 {
        return Err(Error::Domain("density has zero total mass".into()));
    }
    let h = space.dx();
    Ok((0..n)
        .map(|_| {
            let s = rng.gen::<f64>() * acc;
            let mut c = cumulative.partition_point(|v| *v <= s).min(cumulative.len() - 1);
            while m0.values[c] == 0.0 && c > 0 {
                c -= 1;
            }
            let idx = space.multi_index(c);
            [
                space.face_coord(idx[0]) + h * rng.gen::<f64>(),
                space.face_coord(idx[1]) + h * rng.gen::<f64>(),
            ]
        })
        .collect())
}

/// Density of the flow at time `t`, interpolated linearly between nodes.
fn slice_at(solution: &Solution, t: f64) -> Result<Density> {
    let grid = solution.grid;
    let s = (t * grid.nt as f64).clamp(0.0, grid.nt as f64);
    let k = (s.floor() as usize).min(grid.nt - 1);
    let a = s - k as f64;
    let (lo, hi) = (solution.m.slice(k), solution.m.slice(k + 1));
    let values = lo.iter().zip(hi).map(|(x, y)| ((1.0 - a) * x + a * y).max(0.0)).collect();
    Density::new(grid.space(), values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperpositionReport {
    pub n: usize,
    /// `"w1"` for `d = 1`, `"l1"` (histogram) for `d = 2`.
    pub metric: String,
    pub times: Vec<f64>,
    pub discrepancy: Vec<f64>,
    /// `n^(-1/2) diam`.
    pub baseline: f64,
    pub dx: f64,
    /// `3 (dx + baseline)`.
    pub tolerance: f64,
    pub low_confidence: usize,
    pub clamped: usize,
}

impl SuperpositionReport {
    pub fn endpoint_discrepancy(&self) -> f64 {
        *self.discrepancy.last().unwrap_or(&f64::NAN)
    }
}

/// Compares the particle slices of a traced ensemble with the flow slices.
pub fn superposition_report(solution: &Solution, trajectories: &[Trajectory]) -> Result<SuperpositionReport> {
    if trajectories.is_empty() {
        return Err(Error::Invalid("no trajectories".into()));
    }
    let space = solution.grid.space();
    let n = trajectories.len();
    let mut discrepancy = Vec::with_capacity(CHECK_TIMES.len());
    for &t in &CHECK_TIMES {
        let m = slice_at(solution, t)?;
        let value = if space.d == 1 {
            let xs: Vec<f64> = trajectories.iter().map(|p| p.at(t)[0]).collect();
            w1_empirical(&xs, &m)?
        } else {
            let vol = space.cell_volume();
            let mut counts = vec![0.0; space.n_cells()];
            for p in trajectories {
                counts[space.cell_of(&p.at(t))] += 1.0;
            }
            let mass = m.mass();
            counts
                .iter()
                .zip(&m.values)
                .map(|(c, v)| (c / (n as f64 * vol) - v / mass).abs())
                .sum::<f64>()
                * vol
        };
        discrepancy.push(value);
    }
    let baseline = space.diameter() / (n as f64).sqrt();
    Ok(SuperpositionReport {
        n,
        metric: if space.d == 1 { "w1" } else { "l1" }.into(),
        times: CHECK_TIMES.to_vec(),
        discrepancy,
        baseline,
        dx: space.dx(),
        tolerance: 3.0 * (space.dx() + baseline),
        low_confidence: trajectories.iter().filter(|p| p.low_confidence).count(),
        clamped: trajectories.iter().filter(|p| p.clamped).count(),
    })
}

/// Default number of RK4 steps: four per time cell, at least 64.
pub fn default_steps(grid: GridSpec) -> usize {
    (4 * grid.nt).max(64)
}

/// Samples `n` particles from `m0`, traces them and compares the slices.
pub fn verify_superposition(model: &ModelSpec, solution: &Solution, n: usize, seed: u64) -> Result<SuperpositionReport> {
    let starts = sample_particles(&solution.m0(), n, seed)?;
    let paths = trace_ensemble(model, solution, &starts, default_steps(solution.grid))?;
    superposition_report(solution, &paths)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathOptimalityReport {
    /// `path_cost - (u(0, g(0)) - u(1, g(1)))` per trajectory; `NaN` when excluded.
    pub residuals: Vec<f64>,
    pub excluded: usize,
    pub median_abs_residual: f64,
    pub p95_abs_residual: f64,
    pub min_residual: f64,
    pub median_path_cost: f64,
    pub perturbations: usize,
    /// Perturbed paths cheaper than the traced one by more than the tolerance.
    pub perturbations_beaten: usize,
    pub perturbation_pass_fraction: f64,
    /// Largest `traced - perturbed` cost seen.
    pub max_improvement: f64,
    pub mean_path_cost: f64,
    /// `int u(0) m0 - int u(1) m1`.
    pub potential_value: f64,
    pub bridge_rel_error: f64,
    pub mean_energy: f64,
    /// `int |v|^2 m` over the unmasked cells of the flow.
    pub field_kinetic: f64,
    pub nonnegative_model: bool,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (i, a) = (pos.floor() as usize, pos - pos.floor());
    if i + 1 < sorted.len() {
        (1.0 - a) * sorted[i] + a * sorted[i + 1]
    } else {
        sorted[i]
    }
}

/// Returns `(perturbations tried, beaten, max improvement)` for one path.
fn probe_path(model: &ModelSpec, sampler: &Sampler, path: &Trajectory, seed: u64) -> (usize, usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (path.id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let d = sampler.space.d;
    let dx = sampler.space.dx();
    let mut beaten = 0;
    let mut best = f64::NEG_INFINITY;
    let mut buf = path.positions.clone();
    for _ in 0..PERTURBATIONS_PER_PATH {
        let j = rng.gen_range(1..=3) as f64;
        let amp = dx * rng.gen_range(1.0..4.0);
        let mut dir = [0.0; 2];
        if d == 1 {
            dir[0] = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        } else {
            let th = rng.gen_range(0.0..std::f64::consts::TAU);
            dir = [th.cos(), th.sin()];
        }
        for (i, (out, x)) in buf.iter_mut().zip(&path.positions).enumerate() {
            let s = amp * (j * std::f64::consts::PI * path.times[i]).sin();
            *out = axpy(x, s, &dir);
            sampler.clamp(out);
        }
        let (_, cost, _) = path_action(model, sampler, &path.times, &buf);
        let improvement = path.path_cost - cost;
        best = best.max(improvement);
        if improvement > PERTURBATION_TOL {
            beaten += 1;
        }
    }
    (PERTURBATIONS_PER_PATH, beaten, best)
}

/// Potential residuals, bump-perturbation probes and the ensemble duality bridge.
pub fn path_optimality_check(
    model: &ModelSpec,
    solution: &Solution,
    trajectories: &[Trajectory],
    seed: u64,
) -> Result<PathOptimalityReport> {
    if trajectories.is_empty() {
        return Err(Error::Invalid("no trajectories".into()));
    }
    let sampler = Sampler::new(solution);
    let space = sampler.space;
    let grid = solution.grid;

    let residuals: Vec<f64> = trajectories
        .iter()
        .map(|p| {
            if p.low_confidence {
                f64::NAN
            } else {
                p.path_cost - (sampler.u0(&p.start()) - sampler.u1(&p.end()))
            }
        })
        .collect();
    let mut abs: Vec<f64> = residuals.iter().filter(|r| r.is_finite()).map(|r| r.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut costs: Vec<f64> = trajectories
        .iter()
        .filter(|p| !p.low_confidence)
        .map(|p| p.path_cost)
        .collect();
    costs.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let probes: Vec<(usize, usize, f64)> = trajectories
        .par_iter()
        .filter(|p| !p.low_confidence)
        .map(|p| probe_path(model, &sampler, p, seed))
        .collect();
    let perturbations: usize = probes.iter().map(|p| p.0).sum();
    let beaten: usize = probes.iter().map(|p| p.1).sum();
    let max_improvement = probes.iter().fold(f64::NEG_INFINITY, |a, p| a.max(p.2));

    let n = trajectories.len() as f64;
    let mean_path_cost = trajectories.iter().map(|p| p.path_cost).sum::<f64>() / n;
    let mean_energy = trajectories.iter().map(|p| p.energy).sum::<f64>() / n;
    let vol = space.cell_volume();
    let (m0, m1) = (solution.m.slice(0), solution.m.slice(grid.nt));
    let potential_value: f64 = (0..grid.n_cells())
        .map(|c| solution.dual.trace0[c] * m0[c] - solution.dual.trace1[c] * m1[c])
        .sum::<f64>()
        * vol;

    let m_bar = crate::grid::centered_density(&solution.m);
    let vel = &solution.velocity;
    let field_kinetic: f64 = (0..m_bar.data.len())
        .filter(|&i| vel.valid[i])
        .map(|i| {
            let v = vel.v.at(i);
            (v[0] * v[0] + v[1] * v[1]) * m_bar.data[i]
        })
        .sum::<f64>()
        * grid.cell_measure();

    Ok(PathOptimalityReport {
        excluded: residuals.iter().filter(|r| r.is_nan()).count(),
        median_abs_residual: percentile(&abs, 0.5),
        p95_abs_residual: percentile(&abs, 0.95),
        min_residual: residuals.iter().filter(|r| r.is_finite()).fold(f64::INFINITY, |a, r| a.min(*r)),
        median_path_cost: percentile(&costs, 0.5),
        perturbations,
        perturbations_beaten: beaten,
        perturbation_pass_fraction: if perturbations > 0 {
            1.0 - beaten as f64 / perturbations as f64
        } else {
            f64::NAN
        },
        max_improvement,
        mean_path_cost,
        potential_value,
        bridge_rel_error: (mean_path_cost - potential_value).abs() / potential_value.abs().max(1e-300),
        mean_energy,
        field_kinetic,
        nonnegative_model: model.is_nonnegative_on(&space),
        residuals,
    })
}

/// Histogram of start and end points along axis 0: the empirical transport plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
    /// Row-major `bins x bins`; row is the start bin, column the end bin.
    pub counts: Vec<u64>,
    pub marginal0: Vec<u64>,
    pub marginal1: Vec<u64>,
    pub mean_displacement: Point,
    /// Root mean square deviation of the displacement from its mean.
    pub displacement_spread: f64,
}

impl PlanSummary {
    /// Fraction of pairs whose bins differ by `offset` up to `width` bins.
    pub fn band_fraction(&self, offset: isize, width: usize) -> f64 {
        let total: u64 = self.counts.iter().sum();
        let mut inside = 0;
        for i in 0..self.bins {
            for j in 0..self.bins {
                if (j as isize - i as isize - offset).unsigned_abs() <= width {
                    inside += self.counts[i * self.bins + j];
                }
            }
        }
        inside as f64 / total.max(1) as f64
    }
}

pub fn transport_plan_summary(trajectories: &[Trajectory], space: &SpaceGrid, bins: usize) -> Result<PlanSummary> {
    if bins == 0 || trajectories.is_empty() {
        return Err(Error::Invalid("need at least one bin and one trajectory".into()));
    }
    let (lo, hi) = (-space.r, space.r);
    let bin = |x: f64| (((x - lo) / (hi - lo) * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    let mut counts = vec![0u64; bins * bins];
    let mut marginal0 = vec![0u64; bins];
    let mut marginal1 = vec![0u64; bins];
    let mut mean = [0.0; 2];
    for p in trajectories {
        let (a, b) = (bin(p.start()[0]), bin(p.end()[0]));
        counts[a * bins + b] += 1;
        marginal0[a] += 1;
        marginal1[b] += 1;
        for k in 0..2 {
            mean[k] += p.end()[k] - p.start()[k];
        }
    }
    let n = trajectories.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let var = trajectories
        .iter()
        .map(|p| (0..2).map(|k| (p.end()[k] - p.start()[k] - mean[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    Ok(PlanSummary {
        bins,
        lo,
        hi,
        counts,
        marginal0,
        marginal1,
        mean_displacement: mean,
        displacement_spread: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::DualPair;
    use crate::grid::{DensityField, MomentumField, ScalarField};

    /// Uniform stationary flow with a prescribed velocity field (not a solution
    /// of the continuity equation, but enough to exercise the tracer).
    fn fake_solution(d: usize, vel: impl Fn(f64, &[f64]) -> Point, alpha: f64) -> Solution {
        let grid = GridSpec::new(d, 8, 16, 2.0).unwrap();
        let space = grid.space();
        let mut m = DensityField::zeros(grid);
        let u = Density::uniform(space);
        for k in 0..=grid.nt {
            m.slice_mut(k).copy_from_slice(&u.values);
        }
        // u(t) = alpha (1 - t) solves -u_t + H(0) = alpha
        let pot = ScalarField::from_fn(grid, |t, _| alpha * (1.0 - t));
        let al = ScalarField::constant(grid, alpha);
        let mut dual = DualPair::from_fields(pot, al).unwrap();
        dual.trace0 = vec![alpha; space.n_cells()];
        dual.trace1 = vec![0.0; space.n_cells()];
        let mut sol = Solution::from_fields(m, MomentumField::zeros(grid), dual, None).unwrap();
        let n = grid.n_cells();
        for k in 0..grid.nt {
            for c in 0..n {
                let v = vel(grid.cell_time(k), &space.cell_center(c)[..d]);
                for a in 0..d {
                    sol.velocity.v.comps[a].data[k * n + c] = v[a];
                }
            }
        }
        sol
    }

    #[test]
    fn constant_velocity_moves_straight() {
        let sol = fake_solution(2, |_, _| [1.0, 0.0], 0.0);
        let model = ModelSpec::quadratic(2.0);
        let p = trace_characteristic(&model, &sol, [0.0, 0.0], 32).unwrap();
        assert!((p.end()[0] - 1.0).abs() < 1e-12 && p.end()[1].abs() < 1e-12);
        assert!((p.path_cost - 0.5).abs() < 1e-12);
        assert!((p.energy - 1.0).abs() < 1e-12);
        assert!(!p.clamped && !p.low_confidence);
    }

    #[test]
    fn zero_velocity_stays_put() {
        let sol = fake_solution(1, |_, _| [0.0, 0.0], 0.0);
        let p = trace_characteristic(&ModelSpec::quadratic(2.0), &sol, [0.3, 0.0], 16).unwrap();
        assert!(p.positions.iter().all(|x| x[0] == 0.3));
        assert_eq!(p.energy, 0.0);
    }

    #[test]
    fn wall_clamps_and_flags() {
        let sol = fake_solution(1, |_, _| [5.0, 0.0], 0.0);
        let p = trace_characteristic(&ModelSpec::quadratic(2.0), &sol, [0.0, 0.0], 16).unwrap();
        assert!(p.clamped);
        assert_eq!(p.end()[0], 2.0);
    }

    #[test]
    fn rejects_start_outside_box() {
        let sol = fake_solution(1, |_, _| [0.0, 0.0], 0.0);
        assert!(trace_characteristic(&ModelSpec::quadratic(2.0), &sol, [2.5, 0.0], 16).is_err());
    }

    #[test]
    fn rk4_is_fourth_order() {
        // v = x on the interior: x(1) = x0 e; interpolation is exact for linear fields
        let sol = fake_solution(1, |_, x| [x[0], 0.0], 0.0);
        let model = ModelSpec::quadratic(2.0);
        let exact = 0.3 * std::f64::consts::E;
        let err = |steps| (trace_characteristic(&model, &sol, [0.3, 0.0], steps).unwrap().end()[0] - exact).abs();
        let (e1, e2) = (err(8), err(16));
        assert!(e2 < e1 / 12.0, "{e1} {e2}");
    }

    #[test]
    fn stationary_residual_vanishes() {
        let sol = fake_solution(2, |_, _| [0.0, 0.0], 0.7);
        let model = ModelSpec::quadratic(2.0);
        let starts = sample_particles(&sol.m0(), 50, 3).unwrap();
        let paths = trace_ensemble(&model, &sol, &starts, 32).unwrap();
        let rep = path_optimality_check(&model, &sol, &paths, 1).unwrap();
        assert!(rep.median_abs_residual < 1e-6 && rep.p95_abs_residual < 1e-6);
        assert_eq!(rep.perturbations_beaten, 0);
        assert!((rep.mean_path_cost - 0.7).abs() < 1e-12);
    }

    #[test]
    fn samples_are_deterministic_and_in_support() {
        let s = SpaceGrid::new(2, 10, 1.0).unwrap();
        let mut v = vec![0.0; 100];
        v[37] = 1.0;
        let m = Density::new(s, v).unwrap();
        let a = sample_particles(&m, 200, 9).unwrap();
        assert_eq!(a, sample_particles(&m, 200, 9).unwrap());
        assert!(a.iter().all(|x| s.cell_of(x) == 37));
        assert!(sample_particles(&m, 0, 9).is_err());
        let zero = Density::new(s, vec![0.0; 100]).unwrap();
        assert!(sample_particles(&zero, 5, 9).is_err());
    }

    #[test]
    fn uniform_counts_concentrate() {
        let s = SpaceGrid::new(1, 20, 1.0).unwrap();
        let pts = sample_particles(&Density::uniform(s), 100_000, 4).unwrap();
        let mut counts = [0usize; 20];
        for p in &pts {
            counts[s.cell_of(p)] += 1;
        }
        let expected = 5000.0;
        assert!(counts.iter().all(|c| (*c as f64 - expected).abs() <= 4.0 * expected.sqrt()));
    }

    #[test]
    fn plan_of_stationary_ensemble_is_diagonal() {
        let sol = fake_solution(1, |_, _| [0.0, 0.0], 0.0);
        let starts = sample_particles(&sol.m0(), 500, 1).unwrap();
        let paths = trace_ensemble(&ModelSpec::quadratic(2.0), &sol, &starts, 8).unwrap();
        let plan = transport_plan_summary(&paths, &sol.grid.space(), 16).unwrap();
        assert_eq!(plan.band_fraction(0, 0), 1.0);
        assert_eq!(plan.marginal0, plan.marginal1);
    }
}
