use std::path::PathBuf;

use thiserror::Error;

use crate::persist::ContainerError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not satisfy an operation's contract.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value at index {index} while constructing a matrix")]
    NonFinite { index: usize },

    #[error("SVD did not converge after {iterations} sweeps")]
    SvdNonConvergence { iterations: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss at step {step}{}", last_good.as_ref().map(|p| format!(" (last good checkpoint: {})", p.display())).unwrap_or_default())]
    Diverged {
        step: usize,
        last_good: Option<PathBuf>,
    },

    #[error("dataset error: {0}")]
    Data(String),

    #[error(transparent)]
    Container(#[from] ContainerError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures that come from the numerics rather than from the
    /// caller's inputs (non-convergence, divergence, non-finite values).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SvdNonConvergence { .. } | Error::Diverged { .. } | Error::NonFinite { .. }
        )
    }
}
