use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("fully masked softmax row {0}")]
    MaskedRow(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("symbol {symbol} outside alphabet [-{bound}, {bound}]")]
    SymbolRange { symbol: i32, bound: i32 },
    #[error("sigma {0} outside the supported scale range")]
    ScaleRange(f64),
    #[error("alphabet of {0} symbols does not fit a 16-bit table")]
    AlphabetTooLarge(usize),
    #[error("truncated stream: {0}")]
    Truncated(&'static str),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("config hash mismatch: stream {stream:#018x}, weights {weights:#018x}")]
    ConfigHash { stream: u64, weights: u64 },
    #[error("format error: {0}")]
    Format(String),
    #[error("tensor {0}: {1}")]
    Tensor(String, String),
    #[error("context cache exhausted after {0} groups")]
    CacheExhausted(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short stable identifier used by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Index(_) => "index",
            Error::MaskedRow(_) => "masked_row",
            Error::NonFinite(_) => "non_finite",
            Error::SymbolRange { .. } => "symbol_range",
            Error::ScaleRange(_) => "scale_range",
            Error::AlphabetTooLarge(_) => "alphabet",
            Error::Truncated(_) => "truncated",
            Error::Magic { .. } => "magic",
            Error::Version { .. } => "version",
            Error::Checksum { .. } => "checksum",
            Error::ConfigHash { .. } => "config_hash",
            Error::Format(_) => "format",
            Error::Tensor(..) => "tensor",
            Error::CacheExhausted(_) => "cache_exhausted",
            Error::Io(_) => "io",
        }
    }

    /// Whether the error stems from malformed or mismatched file contents.
    pub fn is_format(&self) -> bool {
        matches!(
            self,
            Error::Truncated(_)
                | Error::Magic { .. }
                | Error::Version { .. }
                | Error::Checksum { .. }
                | Error::ConfigHash { .. }
                | Error::Format(_)
                | Error::Tensor(..)
        )
    }
}
