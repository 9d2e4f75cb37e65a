use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameter shapes.
    #[error("configuration error: {0}")]
    Config(String),
    /// Input vector does not match the width a layer expects.
    #[error("shape mismatch at layer {layer}: expected {expected}, got {got}")]
    Shape {
        layer: usize,
        expected: usize,
        got: usize,
    },
    /// An operation was called outside its contract.
    #[error("usage error: {0}")]
    Usage(String),
    /// A NaN or infinity appeared where a finite number is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// Internal consistency violation (e.g. cache from a different network).
    #[error("internal error: {0}")]
    Internal(String),
    /// Malformed checkpoint or data file.
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
