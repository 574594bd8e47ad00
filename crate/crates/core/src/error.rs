use thiserror::Error;

use crate::bert_analysis::Category;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("{0}: non-finite value")]
    NonFinite(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },

    #[error("zero variance")]
    ZeroVariance,

    #[error("coefficient of variation needs a positive mean, got {0}")]
    NonPositiveMean(f64),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("category {0} does not occur in the corpus")]
    CategoryAbsent(Category),

    #[error("token {0:?} missing from frequency table")]
    UnknownToken(String),

    #[error("score matrix has {rows} rows; {need} required")]
    InsufficientRows { rows: usize, need: usize },

    #[error("bad magic at offset {offset}")]
    BadMagic { offset: usize },

    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated archive at offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },

    #[error("unknown dtype code {code} at offset {offset}")]
    UnknownDtype { code: u8, offset: usize },

    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),

    #[error("{0} trailing bytes after last entry")]
    TrailingBytes(usize),

    #[error("missing tensor {0:?}")]
    MissingTensor(String),

    #[error("inconsistent model entry {entry:?}: {msg}")]
    InconsistentModel { entry: String, msg: String },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("sequence {sequence:?}: activation entry {entry:?} not found")]
    DanglingReference { sequence: String, entry: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }
}
