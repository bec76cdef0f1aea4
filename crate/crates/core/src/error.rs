use thiserror::Error;

/// Unified error type for every fallible operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("empty vector")]
    EmptyVector,

    #[error("vector contains a non-finite component at index {0}")]
    NonFinite(usize),

    #[error("zero vector cannot be normalized")]
    ZeroVector,

    #[error("bit length {0} is not a positive multiple of 8")]
    BadBitLength(usize),

    #[error("payload kind mismatch: expected {expected}, got {got}")]
    PayloadMismatch {
        expected: &'static str,
        got: &'static str,
    },

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("unknown id {0}")]
    UnknownId(u64),

    #[error("empty label for id {0}")]
    EmptyLabel(u64),

    #[error("k must be >= 1")]
    BadK,

    #[error("nprobe {nprobe} out of range 1..={nlist}")]
    BadNprobe { nprobe: usize, nlist: usize },

    #[error("ef {ef} is smaller than k {k}")]
    EfTooSmall { ef: usize, k: usize },

    #[error("index is not trained")]
    NotTrained,

    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("{0} is not supported by this index")]
    UnsupportedOperation(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("label index {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("bad header: {0}")]
    BadHeader(String),

    #[error("unsupported format version {got} (expected {expected})")]
    VersionMismatch { expected: u32, got: u32 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("file truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("row/label count mismatch: {rows} rows, {labels} labels")]
    RowCountMismatch { rows: usize, labels: usize },

    #[error("labels are required for this feature format")]
    LabelsRequired,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
