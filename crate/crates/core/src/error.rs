use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can surface.
///
/// Variants are grouped so a caller can map them onto a small set of
/// categories (see [`Error::category`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown class `{class}` at line {line}")]
    UnknownClass { class: String, line: usize },

    #[error("invalid split `{value}` at line {line}")]
    InvalidSplit { value: String, line: usize },

    #[error("bad magic header in {path}")]
    BadMagic { path: PathBuf },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("unsupported checkpoint version {0}")]
    Version(u32),

    #[error("class `{class}` has {available} train items, {requested} requested")]
    InsufficientItems {
        class: String,
        available: usize,
        requested: usize,
    },

    #[error("item `{0}` not found in the cache index")]
    MissingItem(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("http error: {0}")]
    Http(String),

    #[error("authentication failed: {0}")]
    Auth(String),

    #[error("request timed out: {0}")]
    Timeout(String),

    #[error("prompt bank incomplete; deficient classes: {}", .0.join(", "))]
    PartialBank(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Coarse failure category used for exit codes and machine-parsable errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Numeric,
    Network,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Data => "data",
            Category::Numeric => "numeric",
            Category::Network => "network",
        }
    }
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) | Error::UnknownKey(_) => Category::Config,
            Error::Numeric(_) => Category::Numeric,
            Error::Http(_) | Error::Auth(_) | Error::Timeout(_) | Error::PartialBank(_) => Category::Network,
            _ => Category::Data,
        }
    }

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
}
