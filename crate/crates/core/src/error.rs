use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by dataset loading, matrix construction, and training.
#[derive(Debug, Error)]
pub enum McnError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A text input failed to parse; reports file and 1-based line number.
    #[error("{file}:{line}: {msg}")]
    Malformed {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A sparse matrix power exceeded the fill-in budget.
    #[error("matrix power for motif {motif} at k={k} has {nnz} nonzeros, over the density budget of {budget}")]
    DensityBudget {
        motif: String,
        k: usize,
        nnz: usize,
        budget: usize,
    },

    #[error("graph has {n} nodes, over the {max}-node limit for exhaustive enumeration")]
    SizeLimit { n: usize, max: usize },

    #[error("training diverged at epoch {epoch}: {what} is not finite")]
    Diverged { epoch: usize, what: String },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

impl McnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        McnError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, McnError>;
