use thiserror::Error;

/// Errors raised by the sampling engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("input is not on the probability simplex: {0}")]
    NotOnSimplex(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step index {t} out of range 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("projection did not converge after {outer_iterations} outer iterations (residual {residual:.3e})")]
    NonConvergence {
        /// Best iterate found (lowest aggregate residual).
        best: Vec<f64>,
        /// The point handed to the projection, before any correction.
        candidate: Vec<f64>,
        residual: f64,
        outer_iterations: usize,
    },

    #[error("retry cap exhausted for {failed_chains} chain(s)")]
    RetryExhausted { failed_chains: usize },

    #[error("no feasible sequence: {0}")]
    Infeasible(String),

    #[error("checkpoint format error at line {line}: {message}")]
    Checkpoint { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
