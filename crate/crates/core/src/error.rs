use thiserror::Error;

/// Errors raised across the estimator pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter domain error: {0}")]
    ParameterDomain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not positive definite (leading minor {minor}){}", context_suffix(.context))]
    Singular { minor: usize, context: Option<String> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate design matrix: {0}")]
    DegenerateDesign(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("structure error: {0}")]
    Structure(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("incompatible model: {0}")]
    Compatibility(String),

    #[error("oracle mode refused: {0}")]
    OracleCap(String),

    #[error("optimizer aborted: {0}")]
    Optimizer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn context_suffix(context: &Option<String>) -> String {
    match context {
        Some(c) => format!(" at {c}"),
        None => String::new(),
    }
}

/// Coarse classification used by callers that map errors onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::ParameterDomain(_) | Error::Parameter(_) | Error::Compatibility(_) | Error::OracleCap(_) => {
                ErrorKind::Config
            }
            Error::Shape(_)
            | Error::InsufficientData(_)
            | Error::Parse { .. }
            | Error::Structure(_)
            | Error::Alignment(_)
            | Error::State(_)
            | Error::Io(_) => ErrorKind::Data,
            Error::Singular { .. } | Error::DegenerateDesign(_) | Error::Optimizer(_) => ErrorKind::Numerical,
        }
    }

    /// Attach a location (point id, batch element) to a singularity error.
    pub fn at(self, context: impl Into<String>) -> Self {
        match self {
            Error::Singular { minor, .. } => Error::Singular { minor, context: Some(context.into()) },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
