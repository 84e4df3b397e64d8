use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("privacy loss grid needs {required} points, limit is {limit}")]
    GridOverflow { required: usize, limit: usize },

    #[error("calibration did not converge: {0}")]
    NoConvergence(String),

    #[error("probability mass drifted by {drift:e} after convolution")]
    MassDrift { drift: f64 },

    #[error("quadrature reached error {achieved:e}, requested {requested:e}")]
    QuadratureFailure { achieved: f64, requested: f64 },

    #[error("no feasible (q, sigma) cell at epsilon = {epsilon}")]
    EmptyFeasibleSet { epsilon: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
