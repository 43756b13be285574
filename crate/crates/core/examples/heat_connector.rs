//! Runs a near-point mass through the heat semigroup and prints the decay of
//! its L2 norm and its Fisher information against the reference rates.

use mfplan::grid::{Density, SpaceGrid};
use mfplan::metrics::heat_path_estimates;

fn main() -> mfplan::Result<()> {
    let space = SpaceGrid::new(1, 1024, 2.0)?;
    let mut values = vec![0.0; space.nx];
    values[space.nx / 2] = 1.0;
    let mut spike = Density::new(space, values)?;
    spike.normalize()?;

    let times: Vec<f64> = (0..=20).map(|k| 1e-4 * 10f64.powf(k as f64 / 10.0)).collect();
    let rep = heat_path_estimates(&spike, 2.0, &times)?;
    println!("{:>10} {:>12} {:>12} {:>12} {:>9}", "t", "|S_t m|_2", "Fisher", "d/(2t)", "resolved");
    for s in &rep.samples {
        println!(
            "{:>10.2e} {:>12.5} {:>12.4e} {:>12.4e} {:>9}",
            s.t, s.lp_norm, s.fisher, s.gaussian_fisher, s.resolved
        );
    }
    println!("log-log slope {:.4} (expected {:.4})", rep.slope, rep.expected_slope);
    Ok(())
}
