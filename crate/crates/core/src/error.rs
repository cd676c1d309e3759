use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, parameters or config values that cannot describe a valid problem.
    #[error("configuration error: {0}")]
    Config(String),

    /// One of the modelling assumptions (ergodic chain, bounded rewards,
    /// doubly stochastic weights, well-posed features) does not hold.
    #[error("assumption violated ({assumption}): {detail}")]
    Assumption {
        assumption: &'static str,
        detail: String,
    },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// A parameter became NaN or infinite during a run.
    #[error("divergence at round {round}, step {step}, agent {agent}: non-finite parameter")]
    Divergence {
        round: usize,
        step: usize,
        agent: usize,
    },

    #[error("metric `{0}` is not available for this environment")]
    UnsupportedMetric(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::Divergence { .. } => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}
