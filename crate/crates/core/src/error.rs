use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("location {x} outside domain [0, {ell}]")]
    OutOfDomain { x: f64, ell: f64 },

    #[error("invalid source index {index} (model has {count} sources)")]
    InvalidSource { index: usize, count: usize },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("state norm {norm:.3e} exceeded blow-up guard {guard:.3e} at t = {t}")]
    BlowUp { t: f64, norm: f64, guard: f64 },

    #[error("resonant configuration: alpha = 0 with active sources makes mode 0 stationary state undefined")]
    Resonance,

    #[error("target level {level} unattainable within tilt bound {bound:.3e}")]
    Unattainable { level: f64, bound: f64 },

    #[error("root finder failed: {0}")]
    RootFinder(String),

    #[error("control vanishes at a path event; Girsanov weight undefined")]
    ZeroControlAtEvent,

    #[error("divergent entropy cost: {0}")]
    DivergentCost(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
