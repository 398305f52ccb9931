use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented precondition (shape, symmetry, index).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A scalar argument is outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),
    /// An iterative routine failed to reach its tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A matrix expected to be positive semidefinite has a significantly negative eigenvalue.
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e}, scale {scale:e})")]
    NotPsd { min_eig: f64, scale: f64 },
    /// A combinatorial oracle refused to run because its guard was exceeded.
    #[error("refused: {0}")]
    Refused(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
