use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the pruning engine.
///
/// Variants are grouped so callers can map them onto process exit codes:
/// everything except [`Error::Io`] and [`Error::Json`] is a validation
/// failure of inputs or state.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed manifest {path}: {reason}")]
    ManifestParse { path: PathBuf, reason: String },

    #[error("blob size mismatch for tensor `{tensor}`: need {needed} bytes at offset {offset}, blob holds {available}")]
    BlobSizeMismatch {
        tensor: String,
        offset: u64,
        needed: u64,
        available: u64,
    },

    #[error("non-finite value in tensor `{tensor}` at element {index}")]
    NonFiniteWeight { tensor: String, index: usize },

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("layer `{layer}`: {reason}")]
    LayerConstraint { layer: String, reason: String },

    #[error("mask for non-prunable layer `{0}` drops channels")]
    MaskOnNonPrunable(String),

    #[error("mask length {got} does not match out-channel count {expected} of layer `{layer}`")]
    MaskShape {
        layer: String,
        expected: usize,
        got: usize,
    },

    #[error("merge step count {steps} out of range for {kernels} kernels")]
    StepsOutOfRange { steps: usize, kernels: usize },

    #[error("step {step} beyond the {performed} performed merge steps")]
    StepBeyondSequence { step: usize, performed: usize },

    #[error("empty cluster passed to linkage distance")]
    EmptyCluster,

    #[error("layer has no channels to cluster")]
    EmptyLayer,

    #[error("empty scaling-factor pool")]
    EmptyGammaPool,

    #[error("coverage universe is empty")]
    EmptyUniverse,

    #[error("instance with {filters} filters too large for exhaustive search (limit {limit})")]
    InstanceTooLarge { filters: usize, limit: usize },

    #[error("cannot regrow {requested} channels of layer `{layer}`: only {available} pruned")]
    RegrowTooMany {
        layer: String,
        requested: usize,
        available: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown descriptor `{0}`")]
    UnknownDescriptor(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of external input/output rather than of validation.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
