//! Feature frames: one tile's projected visual tokens in bfloat16.

use super::bf16::{decode_slice, encode_slice};
use super::error::FrameError;
use super::wire::{parse_header, write_header, Cursor, HEADER_LEN};
use crate::types::{CompressionRate, PatchGrid};

pub const FRAME_MAGIC: [u8; 4] = *b"DVDF";
/// request_id u64, tile_index u32, tile_count u32, rate u8, token_count u32, dim u32.
pub const FRAME_FIXED_LEN: usize = 8 + 4 + 4 + 1 + 4 + 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureFrame {
    pub request_id: u64,
    pub tile_index: u32,
    pub tile_count: u32,
    pub rate: CompressionRate,
    pub token_count: u32,
    pub dim: u32,
    /// bfloat16 bit patterns, token-major.
    pub payload: Vec<u16>,
}

impl FeatureFrame {
    /// Packs a projected tile, rounding every value to bfloat16.
    pub fn from_grid(
        request_id: u64,
        tile_index: u32,
        tile_count: u32,
        rate: CompressionRate,
        grid: &PatchGrid,
    ) -> Result<Self, FrameError> {
        let frame = Self {
            request_id,
            tile_index,
            tile_count,
            rate,
            token_count: grid.token_count() as u32,
            dim: grid.dim() as u32,
            payload: encode_slice(grid.data()),
        };
        frame.validate().map_err(|e| match e {
            FrameError::InconsistentShape(m) => FrameError::InvalidFrame(m),
            other => other,
        })?;
        Ok(frame)
    }

    /// Decoded features as a square grid.
    pub fn to_grid(&self) -> Result<PatchGrid, FrameError> {
        self.validate()?;
        let side = (self.token_count as f64).sqrt() as usize;
        PatchGrid::new(side, self.dim as usize, decode_slice(&self.payload))
            .map_err(|e| FrameError::InconsistentShape(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        let bad = |m: String| Err(FrameError::InconsistentShape(m));
        if self.token_count as usize != self.rate.tokens_per_tile() {
            return bad(format!(
                "token_count {} does not match rate {} ({} tokens)",
                self.token_count,
                self.rate,
                self.rate.tokens_per_tile()
            ));
        }
        if self.dim == 0 {
            return bad("dim is zero".into());
        }
        if self.tile_index >= self.tile_count {
            return bad(format!("tile_index {} >= tile_count {}", self.tile_index, self.tile_count));
        }
        let expected = self.token_count as u64 * self.dim as u64;
        if self.payload.len() as u64 != expected {
            return bad(format!("payload holds {} values, expected {expected}", self.payload.len()));
        }
        Ok(())
    }

    pub fn body_len(&self) -> usize {
        FRAME_FIXED_LEN + 2 * self.payload.len()
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.body_len()
    }
}

pub fn encode_frame(frame: &FeatureFrame) -> Result<Vec<u8>, FrameError> {
    frame.validate().map_err(|e| match e {
        FrameError::InconsistentShape(m) => FrameError::InvalidFrame(m),
        other => other,
    })?;
    let mut out = Vec::with_capacity(frame.encoded_len());
    write_header(&mut out, FRAME_MAGIC, frame.body_len())?;
    out.extend_from_slice(&frame.request_id.to_le_bytes());
    out.extend_from_slice(&frame.tile_index.to_le_bytes());
    out.extend_from_slice(&frame.tile_count.to_le_bytes());
    out.push(frame.rate.code());
    out.extend_from_slice(&frame.token_count.to_le_bytes());
    out.extend_from_slice(&frame.dim.to_le_bytes());
    for v in &frame.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses a body whose header has already been validated.
pub(crate) fn decode_frame_body(body: &[u8]) -> Result<FeatureFrame, FrameError> {
    let mut c = Cursor::new(body);
    let request_id = c.u64()?;
    let tile_index = c.u32()?;
    let tile_count = c.u32()?;
    let code = c.u8()?;
    let token_count = c.u32()?;
    let dim = c.u32()?;
    let rate = CompressionRate::from_code(code)
        .ok_or_else(|| FrameError::InconsistentShape(format!("unknown rate code {code}")))?;
    let values = token_count as u64 * dim as u64;
    if c.remaining() as u64 != 2 * values {
        return Err(FrameError::InconsistentShape(format!(
            "body carries {} payload bytes for {token_count}x{dim} values",
            c.remaining()
        )));
    }
    let payload = c
        .take(c.remaining())?
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    let frame = FeatureFrame {
        request_id,
        tile_index,
        tile_count,
        rate,
        token_count,
        dim,
        payload,
    };
    frame.validate()?;
    Ok(frame)
}

/// Decodes one frame from the front of `bytes` and returns it with the number
/// of bytes consumed. Nothing past the declared body length is read.
pub fn decode_frame(bytes: &[u8]) -> Result<(FeatureFrame, usize), FrameError> {
    let header = parse_header(bytes, &[FRAME_MAGIC])?;
    let end = HEADER_LEN + header.body_len;
    if bytes.len() < end {
        return Err(FrameError::Truncated);
    }
    if header.body_len < FRAME_FIXED_LEN {
        return Err(FrameError::InconsistentShape(format!(
            "body length {} is shorter than the fixed fields",
            header.body_len
        )));
    }
    Ok((decode_frame_body(&bytes[HEADER_LEN..end])?, end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    pub(crate) fn random_frame(rng: &mut Rng) -> FeatureFrame {
        let rate = if rng.coin(0.5) {
            CompressionRate::Quarter
        } else {
            CompressionRate::Sixteenth
        };
        let dim = 1 + rng.below(4) as u32;
        let tile_count = 1 + rng.below(9) as u32;
        let n = rate.tokens_per_tile() * dim as usize;
        FeatureFrame {
            request_id: rng.below(usize::MAX) as u64,
            tile_index: rng.below(tile_count as usize) as u32,
            tile_count,
            rate,
            token_count: rate.tokens_per_tile() as u32,
            dim,
            payload: (0..n).map(|_| rng.below(1 << 16) as u16).collect(),
        }
    }

    #[test]
    fn minimal_frame_length() {
        let frame = FeatureFrame {
            request_id: 7,
            tile_index: 0,
            tile_count: 1,
            rate: CompressionRate::Sixteenth,
            token_count: 64,
            dim: 1,
            payload: vec![0x3F80; 64],
        };
        let bytes = encode_frame(&frame).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + FRAME_FIXED_LEN + 128);
        assert_eq!(FRAME_FIXED_LEN, 25);
        assert_eq!(&bytes[..4], b"DVDF");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize, 25 + 128);
        assert_eq!(&bytes[10..18], &7u64.to_le_bytes());
        assert_eq!(bytes[26], 16);
        assert_eq!(decode_frame(&bytes).unwrap(), (frame, bytes.len()));
    }

    #[test]
    fn round_trip_and_prefixes() {
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let f = random_frame(&mut rng);
            let bytes = encode_frame(&f).unwrap();
            assert_eq!(decode_frame(&bytes).unwrap().0, f);
            for cut in [0, 3, 4, 9, 10, 30, bytes.len() - 1] {
                assert_eq!(decode_frame(&bytes[..cut]), Err(FrameError::Truncated));
            }
        }
    }

    #[test]
    fn rejects_corruption() {
        let mut rng = Rng::new(6);
        let bytes = encode_frame(&random_frame(&mut rng)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_frame(&bad), Err(FrameError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert_eq!(decode_frame(&bad), Err(FrameError::UnsupportedVersion(9)));
    }

    #[test]
    fn token_count_must_match_rate() {
        let f = FeatureFrame {
            request_id: 1,
            tile_index: 0,
            tile_count: 1,
            rate: CompressionRate::Quarter,
            token_count: 100,
            dim: 1,
            payload: vec![0; 100],
        };
        assert!(matches!(encode_frame(&f), Err(FrameError::InvalidFrame(_))));
        // Hand-build the bytes to bypass the encoder check.
        let mut bytes = Vec::new();
        write_header(&mut bytes, FRAME_MAGIC, FRAME_FIXED_LEN + 200).unwrap();
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(4);
        bytes.extend_from_slice(&100u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend(std::iter::repeat(0u8).take(200));
        assert!(matches!(decode_frame(&bytes), Err(FrameError::InconsistentShape(_))));
    }

    #[test]
    fn trailing_bytes_are_not_read() {
        let mut rng = Rng::new(7);
        let f = random_frame(&mut rng);
        let mut bytes = encode_frame(&f).unwrap();
        let len = bytes.len();
        bytes.extend_from_slice(b"garbage");
        assert_eq!(decode_frame(&bytes).unwrap(), (f, len));
    }

    #[test]
    fn grid_round_trip_through_bf16() {
        let data: Vec<f64> = (0..64 * 2).map(|i| i as f64 * 0.5).collect();
        let grid = PatchGrid::new(8, 2, data).unwrap();
        let f = FeatureFrame::from_grid(3, 1, 2, CompressionRate::Sixteenth, &grid).unwrap();
        assert_eq!(f.to_grid().unwrap(), grid);
        assert!(FeatureFrame::from_grid(3, 2, 2, CompressionRate::Sixteenth, &grid).is_err());
        assert!(FeatureFrame::from_grid(3, 0, 2, CompressionRate::Quarter, &grid).is_err());
    }
}
