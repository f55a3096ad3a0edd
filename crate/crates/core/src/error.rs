use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no guided modes at omega = {omega} rad/s")]
    NoGuidedModes { omega: f64 },

    #[error("root polishing failed in bracket [{lo}, {hi}]")]
    NonConvergence { lo: f64, hi: f64 },

    #[error("mode index {index} out of range (N = {count})")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("spectral parameter gamma = {gamma} outside (-inf, k_s^2 = {limit})")]
    DomainError { gamma: f64, limit: f64 },

    #[error("quadrature failed to reach relative tolerance {tol} ({what})")]
    QuadratureFailure { what: String, tol: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("integrator step size underflow at x = {x}")]
    IntegratorFailure { x: f64 },

    #[error("coupling matrix is reducible; perturbation system is singular")]
    SingularSystem,

    #[error("step too large: dx * max rate = {product} >= 0.1")]
    StepTooLarge { product: f64 },

    #[error("empty aperture for lag {lag} m (aperture {aperture} m)")]
    EmptyAperture { lag: f64, aperture: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("forward model failed at every frequency")]
    ForwardModelFailure,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
