use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("site index {index} out of range ({count} prunable sites)")]
    SiteOutOfRange { index: usize, count: usize },

    #[error("unit index {index} out of range for a site with {units} units")]
    UnitOutOfRange { index: usize, units: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unsupported layer for {context}: {layer}")]
    UnsupportedLayer { context: &'static str, layer: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("label {label} out of range for {classes} classes (sample {sample})")]
    LabelOutOfRange { sample: usize, label: usize, classes: usize },

    #[error("exact Shapley enumeration limited to {limit} players, got {players}")]
    TooManyPlayers { players: usize, limit: usize },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: byte offset {offset}: {message}")]
    Format { path: PathBuf, offset: u64, message: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by input files rather than arithmetic or usage.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format { .. }
                | Error::Io { .. }
                | Error::Csv(_)
                | Error::EmptyDataset
                | Error::LabelOutOfRange { .. }
        )
    }

    /// True for numeric failures: divergence, non-finite values, or a layer
    /// a numeric rule cannot handle.
    pub fn is_numeric_error(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Diverged { .. } | Error::UnsupportedLayer { .. })
    }
}
