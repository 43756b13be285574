//! Reference transport computations used to validate the solver.

mod heat;
mod kl;
mod quantile;

pub use heat::{fisher_information, heat_connector, heat_path_estimates, HeatReport, HeatSample};
pub use kl::{kl_cost, kl_distance, kl_model, kl_solve, kl_upper_bound, KlEntry, KlReport, REFINE_STEPS};
pub use quantile::{
    displacement_interpolation_1d, displacement_lp_power, displacement_moment, quantile_pieces, w1_1d,
    w1_empirical, w2_1d, QuantileFn, QuantilePiece,
};
