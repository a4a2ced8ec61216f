use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A query point left the domain on which a field or law is defined.
    #[error("point {point:?} is outside the valid domain of {what}")]
    OutOfDomain { what: String, point: Vec<f64> },

    /// An invalid scalar or structural parameter.
    #[error("invalid parameter {name}: {reason}")]
    Parameter { name: String, reason: String },

    /// A region degenerated to fewer points than an estimator needs.
    #[error("region too small: {0}")]
    DegenerateRegion(String),

    /// A synthesis plan rejected a swept regularization parameter.
    #[error("plan rejected parameter {param}: {reason}")]
    PlanRejected { param: f64, reason: String },

    /// A solver failed to converge.
    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    /// Dimension mismatch between problem data and an argument.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed data: {0}")]
    Format(String),
}

impl Error {
    pub fn parameter(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn out_of_domain(what: impl Into<String>, point: &[f64]) -> Self {
        Error::OutOfDomain {
            what: what.into(),
            point: point.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
