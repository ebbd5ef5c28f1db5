use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape {
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("cannot normalize a zero vector")]
    ZeroNorm,
    #[error("mean pooling over an all-masked sequence")]
    AllMasked,
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("record {0:?} has no topic assignment")]
    UnknownRecord(String),
    #[error("missing teacher embeddings for {} record(s): {ids:?}", ids.len())]
    MissingTargets { ids: Vec<String> },
    #[error("incompatible pairing: {0}")]
    IncompatiblePairing(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
