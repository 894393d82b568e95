use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("matrix is rank deficient: smallest pivot {smallest:e} vs largest {largest:e}")]
    RankDeficient { smallest: f64, largest: f64 },

    #[error("basis is not orthonormal: ||B^T B - I||_F = {deviation:e}")]
    NotOrthonormal { deviation: f64 },

    #[error("zero column {column} cannot be normalized")]
    ZeroColumn { column: usize },

    #[error("could not find {needed} padding directions (found {found})")]
    UpliftFailed { needed: usize, found: usize },

    #[error("requested {requested} components but effective rank is {effective_rank}")]
    RankExceeded {
        requested: usize,
        effective_rank: usize,
    },

    #[error("loss is undefined in the infinite-regularization limit")]
    InfiniteLambda,

    #[error("operation requires the infinite-regularization limit")]
    FiniteLambda,

    #[error("integration diverged at t = {t}: non-finite entry in {field}")]
    Diverged { t: f64, field: &'static str },

    #[error("training diverged at step {step}: non-finite entry in {field}")]
    TrainingDiverged { step: u64, field: &'static str },

    #[error("run with seed {seed} failed: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory too short: {len} samples, need at least {min}")]
    TrajectoryTooShort { len: usize, min: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("IDX parse error at byte {offset}: {kind}")]
    Idx { offset: u64, kind: IdxErrorKind },

    #[error("CSV parse error at line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error("config error in `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxErrorKind {
    WrongMagic { expected: u32, found: u32 },
    Truncated { expected: u64, found: u64 },
    TrailingBytes { expected: u64, found: u64 },
    CountOverflow,
}

impl std::fmt::Display for IdxErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IdxErrorKind::WrongMagic { expected, found } => {
                write!(f, "wrong magic word: expected {expected:#010x}, found {found:#010x}")
            }
            IdxErrorKind::Truncated { expected, found } => {
                write!(f, "truncated payload: expected {expected} bytes, found {found}")
            }
            IdxErrorKind::TrailingBytes { expected, found } => {
                write!(f, "payload length mismatch: expected {expected} bytes, found {found}")
            }
            IdxErrorKind::CountOverflow => write!(f, "declared counts overflow"),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(
        context: &'static str,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
