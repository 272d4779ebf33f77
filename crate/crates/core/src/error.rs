use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("matrix is not invertible (min eigenvalue {min_eigenvalue:e})")]
    NotInvertible { min_eigenvalue: f64 },
    #[error("dense reference solve refused: system of size {size} exceeds {limit}")]
    RefusedTooLarge { size: usize, limit: usize },
    #[error("task {task} has zero variance in the reference outputs")]
    ZeroVariance { task: usize },
    #[error("objective became non-finite at outer iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
