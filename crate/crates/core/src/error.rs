// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: missing field `{field}`")]
    MissingField { context: String, field: String },

    #[error("{context}: duplicate record id `{id}`")]
    DuplicateId { context: String, id: String },

    #[error("{context}: unknown coast `{value}` (expected Pacific or Caribbean)")]
    UnknownCoast { context: String, value: String },

    #[error("{context}: invalid value for `{field}`: {message}")]
    InvalidField {
        context: String,
        field: String,
        message: String,
    },

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest is empty")]
    EmptyManifest,

    #[error("bad split ratios: {0}")]
    BadRatios(String),

    #[error("no embedding for record `{0}`")]
    MissingEmbedding(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector has no cosine similarity")]
    ZeroVector,

    #[error("non-finite value in embedding at position {0}")]
    NonFinite(usize),

    #[error("image decode failed: {0}")]
    DecodeFailure(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("model load failed for {path}: {message}")]
    ModelLoadFailure { path: PathBuf, message: String },

    #[error("model inference failed: {0}")]
    Inference(String),

    #[error("cannot build an index from zero items")]
    Empty,

    #[error("index is empty")]
    EmptyIndex,

    #[error("bad magic bytes in index file")]
    BadMagic,

    #[error("unsupported index version {0}")]
    VersionMismatch(u32),

    #[error("corrupt index payload: {0}")]
    CorruptPayload(String),

    #[error("calibration needs at least one in-domain score")]
    EmptyInDomain,

    #[error("no reference entries for class {0}")]
    MissingClass(&'static str),

    #[error("no in-domain category `{0}` among the evaluated verdicts")]
    NoInDomainCategory(String),

    #[error("nothing to evaluate")]
    EmptyEvaluation,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the surrounding environment (files, sockets)
    /// rather than of the data itself.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
