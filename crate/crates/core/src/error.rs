use thiserror::Error;

use crate::train::TrainTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("corrupt data in trajectory {trajectory} at step {step}: {reason}")]
    CorruptData {
        trajectory: usize,
        step: usize,
        reason: String,
    },

    #[error("filter failed on trajectory {trajectory} at step {step}: {source}")]
    Filter {
        trajectory: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at {position}: {reason}")]
    Parse { position: String, reason: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("training diverged at step {step} (loss {loss:e})")]
    Divergence {
        step: usize,
        loss: f64,
        trace: Box<TrainTrace>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Attaches trajectory/step context to a filter step error.
    pub(crate) fn at(self, trajectory: usize, step: usize) -> Self {
        match self {
            e @ Error::Filter { .. } => e,
            other => Error::Filter {
                trajectory,
                step,
                source: Box::new(other),
            },
        }
    }

    /// Replaces the trajectory index of a filter error.
    pub(crate) fn for_trajectory(self, k: usize) -> Self {
        match self {
            Error::Filter { step, source, .. } => Error::Filter {
                trajectory: k,
                step,
                source,
            },
            other => other,
        }
    }

    /// The innermost error, with trajectory context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Filter { source, .. } => source.root(),
            other => other,
        }
    }
}
