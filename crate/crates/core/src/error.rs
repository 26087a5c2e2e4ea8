use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::types::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("mask {index} has no foreground pixels")]
    EmptyMask { index: usize },

    #[error("{count} masks exceed the 16-bit index capacity of 65535")]
    TooManyMasks { count: usize },

    #[error("descriptor {index} has zero norm and cannot be normalized")]
    DegenerateDescriptor { index: usize },

    #[error("arithmetic overflow computing {0}")]
    Overflow(&'static str),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: [u8; 8] },

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload in {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: String,
        expected: u64,
        found: u64,
    },

    #[error("{what} has {extra} unexpected trailing bytes")]
    TrailingBytes { what: String, extra: u64 },

    #[error("invariant violations: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: {source}", .path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the underlying cause is a file that does not exist.
    pub fn is_not_found(&self) -> bool {
        matches!(self, Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound)
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
