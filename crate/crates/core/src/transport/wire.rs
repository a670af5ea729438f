//! Shared message header and little-endian field helpers.

use super::error::FrameError;

/// `magic (4) | version u16 | body_length u32`.
pub const HEADER_LEN: usize = 10;
pub const WIRE_VERSION: u16 = 1;
/// Upper bound on a body; rejects garbage lengths before allocating.
pub const MAX_BODY_LEN: usize = 256 << 20;

pub(crate) fn write_header(out: &mut Vec<u8>, magic: [u8; 4], body_len: usize) -> Result<(), FrameError> {
    if body_len > MAX_BODY_LEN {
        return Err(FrameError::TooLarge(body_len as u64));
    }
    out.extend_from_slice(&magic);
    out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
    out.extend_from_slice(&(body_len as u32).to_le_bytes());
    Ok(())
}

/// Parsed header: magic and declared body length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub magic: [u8; 4],
    pub body_len: usize,
}

/// Validates a header against `expected` magics. Shorter input is `Truncated`.
pub(crate) fn parse_header(bytes: &[u8], expected: &[[u8; 4]]) -> Result<Header, FrameError> {
    if bytes.len() < 4 {
        return Err(FrameError::Truncated);
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if !expected.contains(&magic) {
        return Err(FrameError::BadMagic(magic));
    }
    if bytes.len() < 6 {
        return Err(FrameError::Truncated);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != WIRE_VERSION {
        return Err(FrameError::UnsupportedVersion(version));
    }
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated);
    }
    let body_len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    if body_len > MAX_BODY_LEN {
        return Err(FrameError::TooLarge(body_len as u64));
    }
    Ok(Header { magic, body_len })
}

/// Bounds-checked little-endian cursor over a message body.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        let end = self.pos.checked_add(n).ok_or(FrameError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(FrameError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}
