//! Kantorovich-Lebesgue costs between two bumps over a range of weights `a`,
//! with the closed-form upper bound and the Wasserstein lower reference.

use mfplan::grid::{Density, GridSpec};
use mfplan::metrics::kl_distance;
use mfplan::primal::SolverConfig;

fn main() -> mfplan::Result<()> {
    env_logger::init();
    let grid = GridSpec::new(1, 32, 48, 1.0)?;
    let bump = |c: f64, s: f64| move |x: &[f64]| (-(x[0] - c).powi(2) / (2.0 * s * s)).exp();
    let m0 = Density::from_fn(grid.space(), bump(-0.25, 0.2))?;
    let m1 = Density::from_fn(grid.space(), bump(0.3, 0.3))?;
    let config = SolverConfig { stop_gap: 1e-7, stop_residual: 1e-8, ..SolverConfig::default() };

    let report = kl_distance(&m0, &m1, 2.0, &[0.25, 0.5, 1.0, 2.0, 4.0], true, grid, &config)?;
    println!("{:>10} {:>12} {:>12} {:>10}", "a", "KL^(a)", "upper bound", "rel gap");
    for e in &report.costs {
        println!("{:>10.4} {:>12.6} {:>12.6} {:>10.1e}", e.a, e.cost, e.upper_bound, e.rel_gap);
    }
    println!("d_KL = {:.6} at a = {:.4}", report.d_kl, report.argmin_a);
    if let Some(w2) = report.w2 {
        println!("W2   = {w2:.6}");
    }
    Ok(())
}
