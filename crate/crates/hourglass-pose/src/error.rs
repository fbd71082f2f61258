//! Error type shared by every fallible operation in the crate.

use thiserror::Error;

/// Unified error for geometry, model, io, and pipeline failures.
#[derive(Debug, Error)]
pub enum Error {
    /// A contract on an input value was violated (shape, range, emptiness).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A model/weight-file pair or dataset disagreed with a configuration.
    #[error("incompatible: {0}")]
    Incompatible(String),

    /// Weight or checkpoint container was malformed.
    #[error("malformed container: {0}")]
    Container(String),

    /// A detector found no person in the image.
    #[error("no person detected")]
    NoPerson,

    /// Cascade inference was asked for but no box annotation was available.
    #[error("missing annotation for {0}")]
    MissingAnnotation(String),

    /// Ground-truth ids and prediction ids do not line up.
    #[error("id mismatch: missing {missing:?}")]
    IdMismatch { missing: Vec<String> },

    /// Config file could not be parsed.
    #[error("config: {0}")]
    Config(String),

    /// Training produced a non-finite loss or gradient and was aborted.
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
