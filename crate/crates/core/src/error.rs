//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model parameter violates its invariant; the message names the first
    /// violated bound.
    #[error("invalid parameter: {0}")]
    InvalidParams(&'static str),

    #[error("invalid state: {0}")]
    InvalidState(&'static str),

    #[error("invalid path: {0}")]
    InvalidPath(&'static str),

    #[error("invalid scheme: {0}")]
    InvalidScheme(&'static str),

    #[error("invalid grid spec: {0}")]
    InvalidGrid(&'static str),

    #[error("invalid solver config: {0}")]
    InvalidConfig(&'static str),

    /// Interpolation query outside the tabulated box or above the simplex cap.
    #[error("state outside value grid")]
    OutsideGrid,

    #[error("grid file format error: {0}")]
    GridFormat(String),

    #[error("fingerprint mismatch: expected {expected:016x}, found {found:016x}")]
    FingerprintMismatch { expected: u64, found: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
