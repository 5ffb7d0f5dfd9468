use std::io;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid knot grid: lo={lo}, hi={hi}, count={count}")]
    InvalidGrid { lo: f64, hi: f64, count: usize },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("residual {kind} does not fit d_in={d_in}, d_out={d_out}")]
    ResidualShape {
        kind: &'static str,
        d_in: usize,
        d_out: usize,
    },

    #[error("mixing weights for {topology} need length {expected}, got {found}")]
    MixingShape {
        topology: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("batch statistics need at least 2 samples, got {0}")]
    BatchTooSmall(usize),

    #[error("malformed architecture `{text}`: {reason}")]
    Architecture { text: String, reason: String },

    #[error("expansion check requires a block without mixing or residual")]
    NotExpandable,

    #[error("non-finite {what}")]
    NonFinite { what: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("parameter `{name}` = {value} is outside the Q16.16 range")]
    FixedPointRange { name: String, value: f64 },

    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),

    #[error("model file truncated")]
    Truncated,

    #[error("model file holds {found} parameters, expected {expected}")]
    PrecisionMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("invalid task spec: {0}")]
    TaskSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
