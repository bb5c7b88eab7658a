use thiserror::Error;

/// Errors raised by the library.
///
/// Every variant carries a stable machine-readable code (see [`Error::code`])
/// that the command-line front end surfaces in its error JSON.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("pattern has no observed coordinates")]
    EmptyPattern,

    #[error("dataset has no rows")]
    EmptyData,

    #[error("data already contains missing cells")]
    AlreadyPartial,

    #[error("invalid mechanism: {0}")]
    InvalidMechanism(String),

    #[error("intercept calibration failed: {0}")]
    Calibration(String),

    #[error("column {0} has no observed values")]
    UnidentifiedColumn(usize),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("bootstrap unstable: {failed} of {total} resamples failed")]
    UnstableBootstrap { failed: usize, total: usize },

    #[error("imputation unstable: {failed} of {total} imputations failed")]
    UnstableImputation { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid missingness model: {0}")]
    InvalidModel(String),

    #[error("cannot read input: {0}")]
    Ingest(String),

    #[error("schema error at row {row}, column {column}: {message}")]
    Schema {
        row: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "DIMENSION",
            Error::NotPositiveDefinite => "NOT_POSITIVE_DEFINITE",
            Error::NotSymmetric(_) => "NOT_SYMMETRIC",
            Error::EmptyPattern => "EMPTY_PATTERN",
            Error::EmptyData => "EMPTY_DATA",
            Error::AlreadyPartial => "ALREADY_PARTIAL",
            Error::InvalidMechanism(_) => "INVALID_MECHANISM",
            Error::Calibration(_) => "CALIBRATION",
            Error::UnidentifiedColumn(_) => "UNIDENTIFIED_COLUMN",
            Error::NumericalFailure(_) => "NUMERICAL_FAILURE",
            Error::UnstableBootstrap { .. } => "UNSTABLE_BOOTSTRAP",
            Error::UnstableImputation { .. } => "UNSTABLE_IMPUTATION",
            Error::InvalidConfig(_) => "INVALID_CONFIG",
            Error::InvalidModel(_) => "INVALID_MODEL",
            Error::Ingest(_) => "INGEST",
            Error::Schema { .. } => "SCHEMA",
            Error::Io(_) => "IO",
            Error::Json(_) => "JSON",
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
