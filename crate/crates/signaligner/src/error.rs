//! Crate-wide error type.  Variants are grouped by how the CLI maps them to
//! exit codes: configuration/usage problems, data/vocabulary problems, and
//! numeric failures.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // --- configuration / usage ---
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    // --- data / vocabulary ---
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("missing tensor file: {path}")]
    MissingTensorFile { path: PathBuf },
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("shape mismatch: {context} expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },
    #[error("duplicate sample id {id:?} in manifest")]
    DuplicateId { id: String },
    #[error("unknown token {token:?}; vocabulary: {vocabulary}")]
    UnknownToken { token: String, vocabulary: String },
    #[error("unknown synthesizer plugin {id:?}; available: {available}")]
    UnknownPlugin { id: String, available: String },
    #[error("checkpoint {path} is not usable here: {reason}")]
    BadCheckpoint { path: PathBuf, reason: String },
    #[error("manifest error in {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },
    #[error("missing parameter {name}")]
    MissingParam { name: String },

    // --- numeric ---
    #[error("degenerate mask: attention row {row} has no unmasked key")]
    DegenerateMask { row: usize },
    #[error("positional encoding requires an even dimension, got {dim}")]
    OddDimension { dim: usize },
    #[error("non-finite loss at step {step}: {value}")]
    NonFiniteLoss { step: usize, value: f64 },
    #[error("non-finite value in {context}: {value}")]
    NonFiniteValue { context: String, value: f64 },

    // --- environment ---
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn shape(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Process exit code the CLI uses for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 2,
            Error::NonFiniteLoss { .. }
            | Error::NonFiniteValue { .. }
            | Error::DegenerateMask { .. }
            | Error::OddDimension { .. } => 4,
            _ => 3,
        }
    }
}
