use thiserror::Error;

/// Errors produced anywhere in the pilot design pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian (max asymmetry {asymmetry:e})")]
    NonHermitianInput { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("eigenvalue {index} is not strictly positive ({value:e})")]
    NonpositiveEigenvalue { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("singular input: {0}")]
    SingularInput(String),

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("rank deficient construction after {retries} retries")]
    RankDeficient { retries: usize },

    #[error("unknown report field `{0}`")]
    UnknownField(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
