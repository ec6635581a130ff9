use thiserror::Error;

/// Errors raised by ingestion, statistics and the clustering engines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("line {line}: timestamp {timestamp} does not increase past {previous}")]
    NonMonotoneTimestamp {
        line: usize,
        timestamp: i64,
        previous: i64,
    },

    #[error("line {line}: expected {expected} value(s), found {found}")]
    ChannelMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("unknown modality `{0}`")]
    UnknownModality(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("missing modality: {0}")]
    MissingModality(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("mixture component {component} collapsed (total responsibility {mass:e})")]
    ComponentCollapse { component: usize, mass: f64 },
}

impl Error {
    /// Whether the failure is numerical (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite
                | Error::ComponentCollapse { .. }
                | Error::UndefinedCorrelation(_)
        )
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidConfig(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
