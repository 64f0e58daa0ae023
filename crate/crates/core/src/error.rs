use thiserror::Error;

/// Errors raised by the flow laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("non-finite value at grid point {0}")]
    NonFinite(usize),

    #[error("nonpositive density {value:e} at grid point {index}")]
    NonPositiveDensity { index: usize, value: f64 },

    #[error("metric not positive definite: min eigenvalue {min_eig:e} at grid point {index}")]
    GuardBreach { min_eig: f64, index: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("initial class is not Kähler (min eigenvalue {0:e})")]
    NotKahler(f64),

    #[error("class is not nef (min eigenvalue {0:e})")]
    NotNef(f64),

    #[error("expected {expected} arguments, got {got}")]
    ArgumentCount { expected: usize, got: usize },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("insufficient sampling: {0}")]
    InsufficientSampling(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
