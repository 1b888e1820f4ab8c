use thiserror::Error;

use crate::optim::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("dimension mismatch: expected ({expected_x}, {expected_y}), got ({got_x}, {got_y})")]
    DimensionMismatch {
        expected_x: usize,
        expected_y: usize,
        got_x: usize,
        got_y: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("stationarity system has no unique solution")]
    NoUniqueSolution,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("operation not supported for {0} problems")]
    Unsupported(&'static str),

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    /// The iterate left the finite region; the partial trajectory up to the
    /// last finite record is attached.
    #[error("iterate diverged at t = {t}")]
    Divergence { t: usize, partial: Box<Trajectory> },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameters(msg.into())
    }
}
