use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad or missing input data, files, or configuration.
    InvalidInput,
    /// A runtime contract was violated (frozen evaluator, non-finite values).
    Contract,
    /// Anything else.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("malformed JSON at byte {offset}: {message}")]
    JsonParse { offset: usize, message: String },

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("{what} has length {len}, limit is {max}")]
    LengthOverflow {
        what: &'static str,
        len: usize,
        max: usize,
    },

    #[error("autodiff: {0}")]
    Graph(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite loss at batch {batch_index}")]
    NonFiniteLoss { batch_index: usize },

    #[error("evaluator is frozen; parameters cannot be modified")]
    Frozen,

    #[error("evaluator must be frozen before it is used for scoring")]
    NotFrozen,

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl fmt::Display) -> Self {
        Error::InvalidArgument(msg.to_string())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::JsonParse { .. }
            | Error::Schema { .. }
            | Error::Checkpoint { .. }
            | Error::Io { .. }
            | Error::InvalidConfig(_)
            | Error::InvalidArgument(_)
            | Error::TokenOutOfRange { .. } => ErrorClass::InvalidInput,
            Error::Frozen | Error::NotFrozen | Error::NonFiniteLoss { .. } | Error::NonFinite(_) => {
                ErrorClass::Contract
            }
            _ => ErrorClass::Internal,
        }
    }
}
