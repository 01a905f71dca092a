use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside the domain where the requested formula holds.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("overflow: λ·‖x‖ = {arg} exceeds {limit}; rescale or use log_phi")]
    Overflow { arg: f64, limit: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("non-finite state at t = {t} (trajectory {trajectory}); step too large or dynamics stiff")]
    NonFinite { t: f64, trajectory: u64 },

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("initial set is not inside the safe set: margin {margin} < initial radius {radius}")]
    InitialSetUnsafe { margin: f64, radius: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
