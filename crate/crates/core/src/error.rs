use std::path::PathBuf;

use crate::solver::SparseSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "solver did not converge after {iterations} sweeps (kkt residual {kkt:.3e}, duality gap {gap:.3e})",
        iterations = .0.iterations,
        kkt = .0.kkt_residual,
        gap = .0.duality_gap
    )]
    NotConverged(Box<SparseSolution>),

    #[error("cluster {cluster} holds coefficients of both signs")]
    SignConflict { cluster: usize },

    #[error("{context}: {source}")]
    Iteration {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
