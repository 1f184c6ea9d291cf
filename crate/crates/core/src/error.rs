use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Exact pairwise energy is O(N^2); grids above the cap are refused.
    #[error("grid of {pixels} pixels exceeds the exact-energy cap of {cap} pixels")]
    GridTooLarge { pixels: usize, cap: usize },

    #[error("undefined statistical test: {0}")]
    UndefinedTest(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    /// Manifest schema or cross-file validation failure. `at` is the JSON
    /// path of the offending field (e.g. `cases[2].slices[0].prob_path`).
    #[error("manifest: {at}: {message}")]
    Manifest { at: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn manifest(at: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Manifest {
            at: at.into(),
            message: message.into(),
        }
    }
}

/// Byte-level parse errors for the on-disk formats. Offsets are absolute
/// positions in the file so a bad byte can be located with a hex dump.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic at offset 0: expected \"DTEN\", found {found:02x?}")]
    BadMagic { found: Vec<u8> },

    #[error("unsupported container version {version} at offset 4")]
    UnsupportedVersion { version: u8 },

    #[error("unknown dtype code {code:#04x} at offset 5")]
    UnknownDtype { code: u8 },

    #[error("invalid dimension count {ndim} at offset 6")]
    InvalidNdim { ndim: u8 },

    #[error("zero extent in dimension {index} at offset {offset}")]
    ZeroExtent { index: usize, offset: usize },

    #[error("dimension product overflows the addressable payload size")]
    DimOverflow,

    #[error("truncated at offset {offset}: {needed} more bytes required")]
    Truncated { offset: usize, needed: u64 },

    #[error("{extra} trailing bytes after payload at offset {offset}")]
    TrailingData { offset: usize, extra: usize },

    #[error("pgm: bad magic at offset 0: expected \"P5\", found {found:?}")]
    PgmBadMagic { found: String },

    #[error("pgm: malformed header at offset {offset}: {reason}")]
    PgmHeader { offset: usize, reason: String },

    #[error("pgm: unsupported maxval {maxval} at offset {offset}: only 255 is accepted")]
    PgmMaxval { maxval: u64, offset: usize },

    #[error(
        "pgm: ambiguous mask value {value} at offset {offset}: mask pixels must be 0 or >= 128"
    )]
    PgmAmbiguousValue { value: u8, offset: usize },

    #[error(
        "pgm: truncated pixel data at offset {offset}: expected {expected} bytes, found {found}"
    )]
    PgmTruncated {
        offset: usize,
        expected: usize,
        found: usize,
    },

    #[error("json: {0}")]
    Json(String),
}
