//! Small congestion weight: the planning cost approaches half the squared
//! Wasserstein distance and the flow approaches displacement interpolation.

use mfplan::dual::duality_report;
use mfplan::grid::{Density, GridSpec};
use mfplan::metrics::{displacement_interpolation_1d, w1_1d, w2_1d};
use mfplan::model::ModelSpec;
use mfplan::primal::{solve_planning, SolverConfig};

fn main() -> mfplan::Result<()> {
    env_logger::init();
    let grid = GridSpec::new(1, 64, 64, 1.0)?;
    let m0 = Density::from_fn(grid.space(), |x| (-(x[0] + 0.3).powi(2) / 0.02).exp())?;
    let m1 = Density::from_fn(grid.space(), |x| {
        (-(x[0] - 0.2).powi(2) / 0.01).exp() + 0.6 * (-(x[0] - 0.55).powi(2) / 0.005).exp()
    })?;
    let w2 = w2_1d(&m0, &m1)?;
    let config = SolverConfig { stop_gap: 1e-8, stop_residual: 1e-8, ..SolverConfig::default() };

    println!("W2^2 / 2 = {:.6}", 0.5 * w2 * w2);
    for eps in [1e-1, 1e-2, 1e-3] {
        let model = ModelSpec::transport(2.0, eps);
        let sol = solve_planning(&model, grid, &m0, &m1, &config)?;
        let b = duality_report(&model, &sol)?.b;
        let (mut worst, mut most_negative) = (0.0f64, 0.0f64);
        for k in [16, 32, 48] {
            let t = k as f64 / grid.nt as f64;
            let exact = displacement_interpolation_1d(&m0, &m1, t)?;
            // the projected flow can dip a hair below zero in empty cells
            let mut slice = sol.m.slice_density(k);
            most_negative = slice.values.iter().fold(most_negative, |a, v| a.min(*v));
            slice.values.iter_mut().for_each(|v| *v = v.max(0.0));
            worst = worst.max(w1_1d(&slice, &exact)?);
        }
        println!("eps {eps:.0e}: B = {b:.6}, max W1 to the geodesic {worst:.2e}, min density {most_negative:.1e}, {} iterations", sol.iterations);
    }
    Ok(())
}
