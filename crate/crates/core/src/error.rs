use std::path::PathBuf;

use thiserror::Error;

use crate::cloud::AvatarParams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {context}: {message}")]
    Parse { context: String, message: String },

    #[error("snapshot array `{array}` does not match: {message}")]
    SnapshotMismatch { array: String, message: String },

    #[error("non-finite gradient in parameter group `{group}`")]
    NonFiniteGradient { group: &'static str },

    #[error("objective diverged (non-finite total loss) at iteration {iteration}")]
    Diverged {
        iteration: usize,
        params: Box<AvatarParams>,
    },

    #[error("frame {frame}: {source}")]
    InFrame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// The innermost error, looking through frame context.
    pub fn root(&self) -> &Error {
        match self {
            Error::InFrame { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
