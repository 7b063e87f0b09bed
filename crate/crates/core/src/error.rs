use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unstable relay loop: |theta|^2 = {0} >= 1")]
    Unstable(f64),

    #[error("theta outside the open unit disk: |theta| = {0}")]
    Domain(f64),

    #[error("singular {0}")]
    Singular(&'static str),

    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("quadrature did not converge: relative change {0:e}")]
    Quadrature(f64),

    #[error("config error in {field}: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
