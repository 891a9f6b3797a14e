use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument or configuration value violates its contract.
    #[error("invalid parameter `{field}`: {message}")]
    Parameter { field: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A video could not be opened or decoded.
    #[error("ingestion failed for {path}: {diagnostics}")]
    Ingestion { path: PathBuf, diagnostics: String },

    /// Data is well-formed but semantically inconsistent.
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("missing files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<PathBuf>),

    #[error("concentration {0} mg/L is outside the classifiable domain (0, 20000]")]
    OutOfDomain(f64),

    #[error("checkpoint incompatible at tensor `{tensor}`: {message}")]
    CheckpointIncompatible { tensor: String, message: String },

    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training aborted at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("csv error on {path}: {message}")]
    Csv { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parameter {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Csv {
            path: path.into(),
            message: err.to_string(),
        }
    }
}
