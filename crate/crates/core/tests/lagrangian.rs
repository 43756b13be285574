mod common;

use common::gaussian;
use mfplan::grid::GridSpec;
use mfplan::lagrangian::{
    default_steps, path_optimality_check, sample_particles, superposition_report, trace_characteristic,
    trace_ensemble, transport_plan_summary,
};
use mfplan::model::ModelSpec;
use mfplan::primal::{solve_planning, Solution, SolverConfig};

fn solved() -> (ModelSpec, Solution) {
    let grid = GridSpec::new(1, 32, 48, 1.0).unwrap();
    let s = grid.space();
    let model = ModelSpec::quadratic(2.0);
    let cfg = SolverConfig { max_iters: 5000, stop_gap: 1e-9, stop_residual: 1e-9, ..SolverConfig::default() };
    let sol = solve_planning(&model, grid, &gaussian(s, -0.2, 0.25), &gaussian(s, 0.2, 0.25), &cfg).unwrap();
    (model, sol)
}

#[test]
fn particles_follow_the_flow() {
    let (model, sol) = solved();
    let starts = sample_particles(&sol.m0(), 3000, 3).unwrap();
    let paths = trace_ensemble(&model, &sol, &starts, default_steps(sol.grid)).unwrap();
    let sup = superposition_report(&sol, &paths).unwrap();
    for d in &sup.discrepancy {
        assert!(*d <= sup.tolerance, "{:?} vs {}", sup.discrepancy, sup.tolerance);
    }
    let plan = transport_plan_summary(&paths, &sol.grid.space(), 16).unwrap();
    // the two bumps differ by a shift of 0.4, i.e. 3.2 bins of width 0.125
    assert!((plan.mean_displacement[0] - 0.4).abs() < 0.02, "{:?}", plan.mean_displacement);
    assert!(plan.band_fraction(3, 1) > 0.9);
    assert_eq!(plan.marginal0.iter().sum::<u64>(), 3000);
}

#[test]
fn traced_paths_are_optimal() {
    let (model, sol) = solved();
    let starts = sample_particles(&sol.m0(), 400, 9).unwrap();
    let paths = trace_ensemble(&model, &sol, &starts, default_steps(sol.grid)).unwrap();
    let rep = path_optimality_check(&model, &sol, &paths, 9).unwrap();
    assert!(rep.median_abs_residual <= 0.05 * rep.median_path_cost);
    assert!(rep.perturbation_pass_fraction >= 0.95);
    assert!((rep.mean_path_cost - rep.potential_value).abs() <= 0.05 * rep.potential_value.abs());
}

#[test]
fn single_trace_is_reproducible() {
    let (model, sol) = solved();
    let a = trace_characteristic(&model, &sol, [-0.2, 0.0], 128).unwrap();
    let b = trace_characteristic(&model, &sol, [-0.2, 0.0], 128).unwrap();
    assert_eq!(a, b);
    assert!((a.end()[0] - 0.2).abs() < 0.03, "{:?}", a.end());
    assert!(a.cost_so_far.windows(2).all(|w| w[1] >= w[0] - 1e-12) || !model.is_nonnegative_on(&sol.grid.space()));
    assert!(trace_characteristic(&model, &sol, [2.0, 0.0], 128).is_err());
}
