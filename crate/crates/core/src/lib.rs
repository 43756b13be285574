//! Mean field planning on a staggered space-time grid.
//!
//! The crate computes flows `(m, w)` of minimal action between two densities,
//! the dual pair `(u, alpha)` certifying them, and the diagnostics built on top:
//! duality gaps, Hamilton-Jacobi residuals, one-dimensional transport
//! references and particle tracing along the optimal velocity.

pub mod cli;
pub mod dual;
pub mod error;
pub mod grid;
pub mod lagrangian;
pub mod metrics;
pub mod model;
pub mod primal;

pub use error::{Error, Result};
