//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Invalid user-supplied configuration (bad joint count, nonpositive
    /// proportions, unknown motion name, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation's contract (dimension mismatch,
    /// missing forward state, argument out of range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A requested time or index falls outside the available data.
    #[error("boundary error: {0}")]
    Boundary(String),

    /// Clothing transfer preconditions not met.
    #[error("transfer error: {0}")]
    Transfer(String),

    /// A loss term became non-finite; carries the term name.
    #[error("non-finite loss term `{0}`, aborting")]
    NonFinite(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("png error: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("png error: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
