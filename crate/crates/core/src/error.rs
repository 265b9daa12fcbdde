use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every grid point of the prior-times-likelihood product vanished.
    #[error("degenerate posterior{}: evidence underflowed on all {grid_points} grid points over [{lo}, {hi}] Hz", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    DegeneratePosterior {
        step: Option<usize>,
        grid_points: usize,
        lo: f64,
        hi: f64,
    },

    #[error("resource limit: {what} needs {required} evaluations, limit is {limit}")]
    ResourceLimit {
        what: &'static str,
        required: u128,
        limit: u128,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
