//! Toolkit-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/grid shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid run parameters (empty dataset, out-of-range rate, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A file did not match its expected on-disk format.
    #[error("format error: {0}")]
    Format(String),

    /// Checkpoint or artifact version not understood by this reader.
    #[error("version error: {0}")]
    Version(String),

    /// Invisibility calibration cannot meet its constraints.
    #[error("calibration error: {0}")]
    Calibration(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
