use thiserror::Error;

/// Errors raised by the planning solver and its diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("infeasible endpoints: mass(m0) = {mass0}, mass(m1) = {mass1}")]
    InfeasibleEndpoints { mass0: f64, mass1: f64 },

    #[error("step condition violated: tau_primal * tau_dual * |K|^2 = {product} >= 1")]
    StepCondition { product: f64 },

    #[error("prox solve did not converge at cell {cell} (t = {t}, x = {x:?}) after {iterations} iterations")]
    ProxNonConvergence {
        cell: usize,
        t: f64,
        x: Vec<f64>,
        iterations: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("growth bound `{bound}` violated at x = {point:?}: slack = {slack}")]
    GrowthViolation {
        bound: String,
        point: Vec<f64>,
        slack: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used in the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Shape(_) => "shape",
            Error::Invalid(_) => "invalid",
            Error::Unsupported(_) => "unsupported",
            Error::InfeasibleEndpoints { .. } => "infeasible_endpoints",
            Error::StepCondition { .. } => "step_condition",
            Error::ProxNonConvergence { .. } => "prox_nonconvergence",
            Error::NonFinite(_) => "non_finite",
            Error::GrowthViolation { .. } => "growth_violation",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
