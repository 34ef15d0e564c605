use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("potential violates floor: min value {min} < {floor}")]
    PotentialFloor { min: f64, floor: f64 },

    #[error("boundary data must be positive, got minimum {0}")]
    BoundaryNotPositive(f64),

    #[error("coefficient level {level} exceeds basis maximum level {max}")]
    LevelOverflow { level: i32, max: i32 },

    #[error("test function does not vanish within {margin} nodes of the boundary")]
    BoundaryMargin { margin: usize },

    #[error("too few posterior draws: {got} < {need}")]
    TooFewDraws { got: usize, need: usize },

    #[error("{censored} of {total} paths hit the step cap (more than 1%)")]
    Censored { censored: usize, total: usize },

    #[error("chain failed at iteration {iteration}: {source}")]
    ChainFailure {
        iteration: usize,
        /// Flattened coefficients of the last accepted state.
        state: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} replications failed (first: {first})")]
    ReplicationFailures {
        failed: usize,
        total: usize,
        first: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
