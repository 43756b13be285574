//! Traces particles through the optimal velocity of a bump-to-bump flow and
//! checks them against the flow slices and the Kantorovich potentials.
//!
//! Usage: `particle_paths [n_particles] [seed]`

use mfplan::grid::{Density, GridSpec};
use mfplan::lagrangian::{
    default_steps, path_optimality_check, sample_particles, superposition_report, trace_ensemble,
    transport_plan_summary,
};
use mfplan::model::ModelSpec;
use mfplan::primal::{solve_planning, SolverConfig};

fn main() -> mfplan::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);

    let grid = GridSpec::new(1, 64, 64, 1.0)?;
    let bump = |c: f64| move |x: &[f64]| (-(x[0] - c).powi(2) / (2.0 * 0.25f64.powi(2))).exp();
    let m0 = Density::from_fn(grid.space(), bump(-0.2))?;
    let m1 = Density::from_fn(grid.space(), bump(0.2))?;
    let model = ModelSpec::quadratic(2.0);
    let config = SolverConfig { stop_gap: 1e-9, stop_residual: 1e-9, ..SolverConfig::default() };
    let sol = solve_planning(&model, grid, &m0, &m1, &config)?;

    let starts = sample_particles(&m0, n, seed)?;
    let paths = trace_ensemble(&model, &sol, &starts, default_steps(grid))?;
    let sup = superposition_report(&sol, &paths)?;
    let opt = path_optimality_check(&model, &sol, &paths, seed)?;
    let plan = transport_plan_summary(&paths, &grid.space(), 16)?;

    println!("solver iterations       {}", sol.iterations);
    for (t, d) in sup.times.iter().zip(&sup.discrepancy) {
        println!("W1 at t = {t:<4}          {d:.3e}");
    }
    println!("tolerance 3(dx + n^-1/2 diam) {:.3e}", sup.tolerance);
    println!("median |r|              {:.3e}", opt.median_abs_residual);
    println!("95th pct |r|            {:.3e}", opt.p95_abs_residual);
    println!("median path cost        {:.5}", opt.median_path_cost);
    println!("perturbation pass rate  {:.4}", opt.perturbation_pass_fraction);
    println!("max improvement         {:.3e}", opt.max_improvement);
    println!("mean path cost          {:.6}", opt.mean_path_cost);
    println!("int u0 m0 - int u1 m1   {:.6}", opt.potential_value);
    println!("mean energy             {:.6}", opt.mean_energy);
    println!("int |v|^2 m             {:.6}", opt.field_kinetic);
    println!("mean displacement       {:.4}", plan.mean_displacement[0]);
    println!("displacement spread     {:.4}", plan.displacement_spread);
    Ok(())
}
