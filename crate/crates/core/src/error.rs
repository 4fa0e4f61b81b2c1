use thiserror::Error;

use crate::driver::Trace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("inadmissible schedule: gamma + lambda = {0} >= 1")]
    Inadmissible(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate importance weights: sum = {0}")]
    DegenerateWeights(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("insufficient Monte Carlo replications: {0}")]
    InsufficientReps(String),

    #[error("diverged at iteration {iteration}: |theta| = {norm}")]
    Diverged {
        iteration: usize,
        norm: f64,
        partial: Box<Trace>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
