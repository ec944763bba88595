use thiserror::Error;

/// Errors raised by the estimator library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not an se(3) element: {0}")]
    NotInAlgebra(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    /// Rotation angle at (or numerically indistinguishable from) pi.
    #[error("rotation angle {angle} is within 1e-6 of pi; logarithm is ill-conditioned")]
    IllConditionedLog { angle: f64 },

    #[error("invalid time: {0}")]
    InvalidTime(String),

    #[error("invalid prior configuration: {0}")]
    InvalidPrior(String),

    #[error("query time {tau} outside [{start}, {end}]")]
    QueryOutOfRange { tau: f64, start: f64, end: f64 },

    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    /// Normal equations could not be factored (unfixed gauge or unobservable state).
    #[error("normal equations are singular: {0}")]
    Singular(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
