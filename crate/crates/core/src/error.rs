use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed grid, domain or problem description.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Argument outside the mathematical domain of an operation (e.g. a
    /// non-positive determinant handed to a gauge).
    #[error("domain error: {0}")]
    Domain(String),

    /// The Hessian determinant is not positive at some interior node, so the
    /// linearized Monge-Ampere operator is not elliptic there.
    #[error("degenerate Hessian at node ({i}, {j}): det D2u = {det:e}")]
    Degenerate { i: usize, j: usize, det: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("model rejected: {0}")]
    Model(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
