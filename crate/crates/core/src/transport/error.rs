use thiserror::Error;

/// Decoding or validation failure for a single wire message.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported wire version {0}")]
    UnsupportedVersion(u16),
    #[error("message truncated")]
    Truncated,
    #[error("inconsistent shape: {0}")]
    InconsistentShape(String),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("declared body of {0} bytes exceeds the limit")]
    TooLarge(u64),
}

/// Failure on a feature or control stream.
#[derive(Debug, Error)]
pub enum TransportError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("transport closed")]
    Closed,
}
