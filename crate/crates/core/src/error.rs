use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid assignment: entry {index} is {value}, expected -1 or +1")]
    InvalidAssignment { index: usize, value: i64 },

    #[error("density exponent {exponent} overflows f64")]
    Saturation { exponent: f64 },

    #[error("enumeration over {m} sources exceeds the budget of {max} sources")]
    EnumerationTooLarge { m: usize, max: usize },

    #[error("covariance is singular (smallest eigenvalue {min_eigenvalue:e})")]
    SingularCovariance { min_eigenvalue: f64 },

    #[error("schur complement of the latent block is not positive ({value:e})")]
    NonPsdSchur { value: f64 },

    #[error("matrix is singular after ridge (smallest eigenvalue {min_eigenvalue:e})")]
    SingularMatrix { min_eigenvalue: f64 },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("need at least {required} samples, got {got}")]
    InsufficientSamples { required: usize, got: usize },

    #[error("invalid label {value} at source {source_index}, point {point}")]
    InvalidLabel {
        source_index: usize,
        point: usize,
        value: i64,
    },

    #[error("effective rank is undefined for the zero matrix")]
    UndefinedEffectiveRank,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("threshold must be non-negative, got {0}")]
    NegativeThreshold(f64),

    #[error("objective increased for {iterations} consecutive iterations; try a smaller step")]
    Divergence { iterations: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("expected edge count {k} must be below the {pairs} available pairs")]
    InvalidEdgeCount { k: usize, pairs: usize },

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 validation, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Saturation { .. }
            | Error::SingularCovariance { .. }
            | Error::NonPsdSchur { .. }
            | Error::SingularMatrix { .. }
            | Error::NotPsd { .. }
            | Error::Divergence { .. }
            | Error::NumericalFailure(_) => 3,
            Error::Io(_) => 4,
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => 4,
            Error::Json(e) if e.is_io() => 4,
            _ => 2,
        }
    }
}
