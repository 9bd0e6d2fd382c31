//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Kernel estimation was handed a guide with no usable gradient energy.
    #[error("degenerate guide image: {0}")]
    DegenerateGuide(String),

    /// Radiance-field optimization produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// A structured file failed to parse or carried a wrong magic/version.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] ::image::ImageError),
}

impl Error {
    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
