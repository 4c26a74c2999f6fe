use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("non-finite input at row {0}")]
    NonFinite(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("optimizer failed to converge: {0}")]
    NonConvergence(String),
    #[error("non-stationary GARCH parameters: persistence {0}")]
    NonStationary(f64),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("all candidate fits failed")]
    AllFitsFailed,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
