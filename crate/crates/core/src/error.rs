use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("singular linear system")]
    Singular,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    InvalidCovariance { min_eigenvalue: f64 },

    #[error("operation not supported by this moment model: {0}")]
    UnsupportedOperator(String),

    #[error("data set is empty")]
    EmptyData,

    #[error("invalid LMI problem: {0}")]
    InvalidProblem(String),

    #[error("solver did not converge after {iterations} iterations (best slack {best_slack:e})")]
    NonConvergence { iterations: usize, best_slack: f64 },

    #[error("gain {gain} admits no certificate")]
    GainTooLarge { gain: f64 },

    #[error("rate product a*chi = {0} outside (0, 2)")]
    InvalidRate(f64),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("parse error at line {line}, column {column}: {token:?}")]
    Parse { line: usize, column: usize, token: String },

    #[error("row at line {line} has {got} fields, expected {expected}")]
    RaggedRow { line: usize, expected: usize, got: usize },

    #[error("column {column} out of range (table has {available} columns)")]
    ColumnOutOfRange { column: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
