use std::path::PathBuf;

use thiserror::Error;

use crate::reasoner::StageError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: field `{field}`: {message}")]
    Schema { file: PathBuf, field: String, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("frame {frame}: {source}")]
    Frame {
        frame: u32,
        #[source]
        source: groundmap_core::Error,
    },
    #[error("frame {frame}: {source}")]
    InFrame {
        frame: u32,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Core(#[from] groundmap_core::Error),
    #[error(transparent)]
    Grounding(#[from] StageError),
    #[error("endpoint: {0}")]
    Endpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn schema(file: impl Into<PathBuf>, field: impl Into<String>, message: impl ToString) -> Self {
        Error::Schema { file: file.into(), field: field.into(), message: message.to_string() }
    }

    /// Process exit status for this error. Clap reserves 2 for usage errors.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. } => 3,
            Error::Config(_) => 4,
            Error::Schema { .. } => 5,
            Error::Checkpoint { .. } => 6,
            Error::Frame { .. } => 7,
            Error::InFrame { source, .. } => source.exit_code(),
            Error::Core(_) => 8,
            Error::Endpoint(_) => 9,
            Error::Grounding(e) => e.exit_code(),
        }
    }
}
