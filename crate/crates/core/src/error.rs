use thiserror::Error;

/// Errors raised by the spectral, profile, norm and solver layers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("lambda = {lambda} is below the Hardy constant {critical} for N = {dim}")]
    LambdaBelowCritical { lambda: f64, critical: f64, dim: usize },

    #[error("invalid dimension N = {0} (need N >= 2)")]
    InvalidDimension(usize),

    #[error("condition (V) clause {clause} fails near r = {radius:e}: {detail}")]
    ValidationFailure {
        clause: &'static str,
        radius: f64,
        detail: String,
    },

    #[error("quadratic form is negative (min Rayleigh quotient {min_quotient:e}); operator is not nonnegative")]
    NotNonnegative { min_quotient: f64 },

    #[error("source term violates the power envelope near r = {radius:e} (local exponent {exponent})")]
    EnvelopeViolation { radius: f64, exponent: f64 },

    #[error("quadrature did not reach tolerance {tol:e} (estimate {estimate:e})")]
    QuadratureFailure { tol: f64, estimate: f64 },

    #[error("no Picard radius >= 1e-8 gives a contraction factor <= 1/2 (best {best_ratio})")]
    ContractionFailure { best_ratio: f64 },

    #[error("ODE continuation broke down at r = {radius:e}: {detail}")]
    OdeFailure { radius: f64, detail: String },

    #[error("large-r asymptotics not reached: residual {residual:e} exceeds 5% of c_k = {ck:e}")]
    AsymptoticNotReached { ck: f64, residual: f64 },

    #[error("Lorentz indices (p, sigma) = ({p}, {sigma}) are not admissible")]
    NotAdmissible { p: String, sigma: String },

    #[error("mode k = {k}, i = {i} is not supported for N = {dim}")]
    UnsupportedMode { k: usize, i: usize, dim: usize },

    #[error("time stepping broke down: {0}")]
    StabilityFailure(String),

    #[error("kernel sample {value:e} at r = {radius}, t = {time} is negative")]
    PositivityViolation { value: f64, radius: f64, time: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
