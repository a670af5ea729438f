//! Router checkpoint file.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "VIRC"
//! 4       2         version, u16 LE (= 1)
//! 6       4         feature dim D, u32 LE
//! 10      8·(D+1)   weights, f64 LE, bias last
//! ```

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::vision::RouterParams;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VIRC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a router checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("invalid weights: {0}")]
    Invalid(#[from] crate::error::Error),
}

pub fn encode_checkpoint(params: &RouterParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 8 * params.weights().len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.dim() as u32).to_le_bytes());
    for w in params.weights() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<RouterParams, CheckpointError> {
    if bytes.len() < 10 {
        return Err(CheckpointError::Truncated);
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let body = &bytes[10..];
    if body.len() < 8 * (dim + 1) {
        return Err(CheckpointError::Truncated);
    }
    let weights = body[..8 * (dim + 1)]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(RouterParams::new(weights)?)
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &RouterParams) -> Result<(), CheckpointError> {
    w.write_all(&encode_checkpoint(params))?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<RouterParams, CheckpointError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &RouterParams) -> Result<(), CheckpointError> {
    std::fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<RouterParams, CheckpointError> {
    decode_checkpoint(&std::fs::read(path)?)
}
