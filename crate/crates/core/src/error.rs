use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An integration did not reach its tolerance. `value` is the best
    /// available estimate, `err_estimate` the error actually achieved.
    #[error("failed to converge: best estimate {value} with error estimate {err_estimate:e} ({detail})")]
    FailedConvergence {
        value: f64,
        err_estimate: f64,
        detail: String,
    },

    #[error("non-finite integrand value {value} at node {node:?}")]
    Domain { node: Vec<f64>, value: f64 },

    #[error("unsupported dimension: n = {n} (supported: {supported})")]
    UnsupportedDimension { n: usize, supported: &'static str },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
