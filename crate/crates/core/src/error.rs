use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("tokenization error: {0}")]
    Token(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("non-finite activations in encoder layer {layer}")]
    NonFinite { layer: usize },

    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGrad { name: String },

    #[error("transport solver error: {0}")]
    Transport(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, configs, arguments)
    /// rather than internal failures. The CLI maps these to exit code 1.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Config(_)
                | Error::Vocab(_)
                | Error::Token(_)
                | Error::Image(_)
                | Error::Corpus(_)
                | Error::Invalid(_)
                | Error::Checkpoint(_)
        )
    }
}
