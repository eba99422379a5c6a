use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op} requires even spatial extents, got {height}x{width}")]
    OddExtent {
        op: &'static str,
        height: usize,
        width: usize,
    },

    #[error("bundle manifest not found in {0}")]
    MissingManifest(PathBuf),

    #[error("malformed bundle manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },

    #[error("unsupported bundle format version {found} (expected {expected})")]
    UnsupportedVersion { found: u64, expected: u64 },

    #[error("bundle is missing tensor `{0}`")]
    MissingEntry(String),

    #[error("bundle has unexpected tensor `{0}`")]
    UnexpectedEntry(String),

    #[error("layer `{layer}` has shape {found:?}, expected {expected:?}")]
    LayerShape {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("blob {file} too short for tensor `{name}`: need {needed} bytes at offset {offset}, file has {available}")]
    TruncatedBlob {
        name: String,
        file: PathBuf,
        offset: u64,
        needed: u64,
        available: u64,
    },

    #[error("image {id}: {reason}")]
    InvalidImage { id: String, reason: String },

    #[error("unknown label directory `{found}`; valid labels are {valid}")]
    UnknownLabel { found: String, valid: String },

    #[error("corpus at {0} contains no images")]
    EmptyCorpus(PathBuf),

    #[error("training features have zero variance; no principal components exist")]
    DegenerateFeatures,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{op} needs at least {needed} samples, got {got}")]
    TooFewSamples {
        op: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("{op} needs at least 2 distinct classes, got {got}")]
    TooFewClasses { op: &'static str, got: usize },

    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op} needs at least {needed} results, got {got}")]
    TooFewResults {
        op: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("oracle scope exceeded: {0}")]
    OracleScope(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed report: {0}")]
    MalformedReport(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for failures caused by the caller's inputs or the filesystem,
    /// as opposed to failures inside a numerical routine.
    pub fn is_usage_or_io(&self) -> bool {
        matches!(
            self,
            Error::MissingManifest(_)
                | Error::MalformedManifest { .. }
                | Error::UnsupportedVersion { .. }
                | Error::MissingEntry(_)
                | Error::UnexpectedEntry(_)
                | Error::LayerShape { .. }
                | Error::TruncatedBlob { .. }
                | Error::InvalidImage { .. }
                | Error::UnknownLabel { .. }
                | Error::EmptyCorpus(_)
                | Error::InvalidArgument(_)
                | Error::MalformedReport(_)
                | Error::Io { .. }
                | Error::Json { .. }
        )
    }
}
