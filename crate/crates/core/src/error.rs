// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use thiserror::Error;

/// Everything that can go wrong while computing saliency, evaluating
/// explanations or steering a prompt.
#[derive(Debug, Error)]
pub enum Error {
    /// A contrastive spec is malformed or refers to ids outside the vocabulary.
    #[error("invalid contrastive spec: {0}")]
    InvalidSpec(String),

    /// A token sequence violates its invariants (empty, id out of range, ...).
    #[error("invalid token sequence: {0}")]
    InvalidTokens(String),

    /// The backend does not advertise the capability an operation needs.
    #[error("backend does not support {0}")]
    UnsupportedCapability(&'static str),

    /// Input longer than the backend's context window.
    #[error("sequence of {len} tokens exceeds backend context of {limit}")]
    Capacity { len: usize, limit: usize },

    /// Invalid construction parameters or unresolvable configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The remote backend could not be reached or answered with an error.
    #[error("transport error: {0}")]
    Transport(String),

    /// The remote backend answered with a body that violates the wire protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Dataset or word list parse failure.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input or configuration rather
    /// than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::InvalidTokens(_)
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::Capacity { .. }
                | Error::UnsupportedCapability(_)
        )
    }
}
