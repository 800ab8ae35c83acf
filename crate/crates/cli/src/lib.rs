//! Synthetic corpus harness, experiment configuration and the `nmfseg`
//! command-line surface.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod cli;
pub mod config;
pub mod corpus;
pub mod labels;
pub mod manifest;
pub mod pipeline;
pub mod runlog;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{context}: {message}")]
    Stage { context: String, message: String },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Self::MissingFile(path.to_path_buf())
        } else {
            Self::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn signal(path: &Path, e: nmfseg::signal::SignalError) -> Self {
        use nmfseg::signal::SignalError;
        match e {
            SignalError::Io(io) => Self::io(path, io),
            other => Self::format(path, other.to_string()),
        }
    }

    pub fn stage(context: impl Into<String>, e: impl std::fmt::Display) -> Self {
        Self::Stage {
            context: context.into(),
            message: e.to_string(),
        }
    }
}
