use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed or inconsistent input data (parse, alignment, persistence).
    Data,
    /// Numeric degeneracy or an argument outside a function's domain.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("did not converge: {0}")]
    Convergence(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("detector name mismatch: expected {expected:?}, found {found:?}")]
    NameMismatch { expected: Vec<String>, found: Vec<String> },

    #[error("duplicate detector name {0:?}")]
    DuplicateName(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: usize, expected: usize, found: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not a calibration file (bad magic)")]
    BadMagic,

    #[error("calibration file truncated")]
    Truncated,

    #[error("calibration checksum mismatch")]
    Checksum,

    #[error("unsupported calibration format version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("malformed calibration payload: {0}")]
    Payload(String),

    #[error("guard violated: {0}")]
    Guard(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Domain(_) | Error::Degenerate(_) | Error::Convergence(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    /// Short machine-parseable tag for the variant.
    pub fn kind_tag(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Degenerate(_) => "degenerate",
            Error::Convergence(_) => "convergence",
            Error::InsufficientData(_) => "insufficient-data",
            Error::Dimension(_) => "dimension",
            Error::NameMismatch { .. } => "name-mismatch",
            Error::DuplicateName(_) => "duplicate-name",
            Error::Parse { .. } => "parse",
            Error::RaggedRow { .. } => "ragged-row",
            Error::Io { .. } => "io",
            Error::BadMagic => "bad-magic",
            Error::Truncated => "truncated",
            Error::Checksum => "checksum",
            Error::UnsupportedVersion { .. } => "unsupported-version",
            Error::Payload(_) => "payload",
            Error::Guard(_) => "guard",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
