//! Moves a Gaussian bump to a shifted copy under `H = |p|^2/2`, `F = m^2/2`
//! and prints the duality certificate of the result.

use mfplan::dual::duality_report;
use mfplan::grid::{Density, GridSpec};
use mfplan::model::ModelSpec;
use mfplan::primal::{solve_planning, SolverConfig};

fn main() -> mfplan::Result<()> {
    env_logger::init();
    let grid = GridSpec::new(1, 64, 64, 2.0)?;
    let space = grid.space();
    let bump = |c: f64| move |x: &[f64]| (-(x[0] - c).powi(2) / (2.0 * 0.2f64.powi(2))).exp();
    let m0 = Density::from_fn(space, bump(-0.5))?;
    let m1 = Density::from_fn(space, bump(0.5))?;
    let model = ModelSpec::quadratic(2.0);

    let start = std::time::Instant::now();
    let sol = solve_planning(&model, grid, &m0, &m1, &SolverConfig::default())?;
    let report = duality_report(&model, &sol)?;
    println!("iterations     {} (converged: {})", sol.iterations, sol.converged);
    println!("wall time      {:.2?}", start.elapsed());
    println!("B              {:.8}", report.b);
    println!("A              {:.8}", report.a);
    println!("relative gap   {:.3e}", report.rel_gap);
    println!("int Y_H m      {:.3e}", report.yh_integral);
    println!("int Y_F        {:.3e}", report.yf_integral);
    println!("HJ on support  {:.3e}", report.hj_violation_support);
    println!("defect mass    {:.3e}", report.defect_mass);
    println!("min density    {:.3e}", report.min_density);
    Ok(())
}
