use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid clock: {0}")]
    InvalidClock(String),

    #[error("moment order {0} is not supported (expected 1, 2 or 3)")]
    UnsupportedMoment(u32),

    #[error("unstable model: load {rho} is not below 1")]
    Unstable { rho: f64 },

    #[error("operation requires a {expected} model, got {got}")]
    WrongModel {
        expected: &'static str,
        got: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "model has clocks that can fire simultaneously (tie risk); excluded from identity runs"
    )]
    TieRisk,

    #[error("probe `{probe}` returned a non-finite value at time {time}")]
    NonFiniteProbe { probe: String, time: f64 },

    #[error("diffusion variance is zero; the exponential approximation degenerates")]
    DegenerateDiffusion,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("covariance matrix is not positive semidefinite")]
    NotPositiveSemidefinite,

    #[error("output error: {0}")]
    Io(String),

    #[error("accumulators have incompatible layouts and cannot be merged")]
    IncompatibleAccumulators,
}
