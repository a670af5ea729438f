//! Control messages between clients and servers.
//!
//! Same 10-byte header as feature frames with magic `DVDC`, then a kind byte
//! and a kind-specific body (see `docs/wire.md`).

use super::error::FrameError;
use super::wire::{parse_header, write_header, Cursor, HEADER_LEN};

pub const CONTROL_MAGIC: [u8; 4] = *b"DVDC";

const KIND_SUBMIT: u8 = 1;
const KIND_EXPECT: u8 = 2;
const KIND_RESPONSE: u8 = 3;
const KIND_ABORT: u8 = 4;

/// An image request sent to the vision (or monolith) server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submit {
    pub request_id: u64,
    pub arrival_ns: u64,
    pub decode_len: u32,
    pub prompt: Vec<u32>,
    pub height: u32,
    pub width: u32,
    /// Row-major RGB, 8 bits per channel.
    pub pixels: Vec<u8>,
}

/// Tells the language server which text context and decode length to pair
/// with the features that will arrive for `request_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expect {
    pub request_id: u64,
    pub arrival_ns: u64,
    pub decode_len: u32,
    pub prompt: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseStatus {
    Ok = 0,
    Failed = 1,
}

/// Wall-clock stage completions, nanoseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Timings {
    pub arrival_ns: u64,
    pub vision_done_ns: Option<u64>,
    pub features_received_ns: Option<u64>,
    pub prefill_done_ns: Option<u64>,
    pub decode_done_ns: Option<u64>,
}

impl Timings {
    /// Present stage timestamps are non-decreasing in stage order.
    pub fn is_monotone(&self) -> bool {
        let stages = [
            self.vision_done_ns,
            self.features_received_ns,
            self.prefill_done_ns,
            self.decode_done_ns,
        ];
        let present: Vec<u64> = stages.iter().flatten().copied().collect();
        present.windows(2).all(|w| w[0] <= w[1])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMsg {
    pub request_id: u64,
    pub status: ResponseStatus,
    pub tokens: Vec<u32>,
    /// Visual tokens fused into the context.
    pub visual_tokens: u32,
    pub timings: Timings,
    pub error: String,
}

impl ResponseMsg {
    pub fn failed(request_id: u64, arrival_ns: u64, error: impl Into<String>) -> Self {
        Self {
            request_id,
            status: ResponseStatus::Failed,
            tokens: Vec::new(),
            visual_tokens: 0,
            timings: Timings {
                arrival_ns,
                ..Timings::default()
            },
            error: error.into(),
        }
    }
}

/// Sent on the feature stream when the vision side gives up on a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Abort {
    pub request_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlMessage {
    Submit(Submit),
    Expect(Expect),
    Response(ResponseMsg),
    Abort(Abort),
}

fn put_u32s(out: &mut Vec<u8>, values: &[u32]) {
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn put_opt(out: &mut Vec<u8>, v: Option<u64>) {
    out.push(u8::from(v.is_some()));
    out.extend_from_slice(&v.unwrap_or(0).to_le_bytes());
}

fn get_u32s(c: &mut Cursor<'_>) -> Result<Vec<u32>, FrameError> {
    let n = c.u32()? as usize;
    if n.saturating_mul(4) > c.remaining() {
        return Err(FrameError::InconsistentShape(format!("list of {n} words overruns the body")));
    }
    (0..n).map(|_| c.u32()).collect()
}

fn get_bytes<'a>(c: &mut Cursor<'a>) -> Result<&'a [u8], FrameError> {
    let n = c.u32()? as usize;
    if n > c.remaining() {
        return Err(FrameError::InconsistentShape(format!("{n} bytes overrun the body")));
    }
    c.take(n)
}

fn get_opt(c: &mut Cursor<'_>) -> Result<Option<u64>, FrameError> {
    let flag = c.u8()?;
    let v = c.u64()?;
    match flag {
        0 => Ok(None),
        1 => Ok(Some(v)),
        f => Err(FrameError::InconsistentShape(format!("option flag {f}"))),
    }
}

fn get_string(c: &mut Cursor<'_>) -> Result<String, FrameError> {
    String::from_utf8(get_bytes(c)?.to_vec()).map_err(|_| FrameError::InconsistentShape("string is not UTF-8".into()))
}

pub fn encode_control(msg: &ControlMessage) -> Result<Vec<u8>, FrameError> {
    let mut body = Vec::new();
    match msg {
        ControlMessage::Submit(s) => {
            if s.pixels.len() as u64 != s.height as u64 * s.width as u64 * 3 {
                return Err(FrameError::InvalidFrame(format!(
                    "{} pixel bytes for a {}x{} image",
                    s.pixels.len(),
                    s.height,
                    s.width
                )));
            }
            body.push(KIND_SUBMIT);
            body.extend_from_slice(&s.request_id.to_le_bytes());
            body.extend_from_slice(&s.arrival_ns.to_le_bytes());
            body.extend_from_slice(&s.decode_len.to_le_bytes());
            put_u32s(&mut body, &s.prompt);
            body.extend_from_slice(&s.height.to_le_bytes());
            body.extend_from_slice(&s.width.to_le_bytes());
            put_bytes(&mut body, &s.pixels);
        }
        ControlMessage::Expect(e) => {
            body.push(KIND_EXPECT);
            body.extend_from_slice(&e.request_id.to_le_bytes());
            body.extend_from_slice(&e.arrival_ns.to_le_bytes());
            body.extend_from_slice(&e.decode_len.to_le_bytes());
            put_u32s(&mut body, &e.prompt);
        }
        ControlMessage::Response(r) => {
            body.push(KIND_RESPONSE);
            body.extend_from_slice(&r.request_id.to_le_bytes());
            body.push(r.status as u8);
            put_u32s(&mut body, &r.tokens);
            body.extend_from_slice(&r.visual_tokens.to_le_bytes());
            body.extend_from_slice(&r.timings.arrival_ns.to_le_bytes());
            put_opt(&mut body, r.timings.vision_done_ns);
            put_opt(&mut body, r.timings.features_received_ns);
            put_opt(&mut body, r.timings.prefill_done_ns);
            put_opt(&mut body, r.timings.decode_done_ns);
            put_bytes(&mut body, r.error.as_bytes());
        }
        ControlMessage::Abort(a) => {
            body.push(KIND_ABORT);
            body.extend_from_slice(&a.request_id.to_le_bytes());
            put_bytes(&mut body, a.reason.as_bytes());
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    write_header(&mut out, CONTROL_MAGIC, body.len())?;
    out.extend_from_slice(&body);
    Ok(out)
}

pub(crate) fn decode_control_body(body: &[u8]) -> Result<ControlMessage, FrameError> {
    let mut c = Cursor::new(body);
    let msg = match c.u8()? {
        KIND_SUBMIT => {
            let request_id = c.u64()?;
            let arrival_ns = c.u64()?;
            let decode_len = c.u32()?;
            let prompt = get_u32s(&mut c)?;
            let height = c.u32()?;
            let width = c.u32()?;
            let pixels = get_bytes(&mut c)?.to_vec();
            if pixels.len() as u64 != height as u64 * width as u64 * 3 {
                return Err(FrameError::InconsistentShape(format!(
                    "{} pixel bytes for a {height}x{width} image",
                    pixels.len()
                )));
            }
            ControlMessage::Submit(Submit {
                request_id,
                arrival_ns,
                decode_len,
                prompt,
                height,
                width,
                pixels,
            })
        }
        KIND_EXPECT => ControlMessage::Expect(Expect {
            request_id: c.u64()?,
            arrival_ns: c.u64()?,
            decode_len: c.u32()?,
            prompt: get_u32s(&mut c)?,
        }),
        KIND_RESPONSE => {
            let request_id = c.u64()?;
            let status = match c.u8()? {
                0 => ResponseStatus::Ok,
                1 => ResponseStatus::Failed,
                s => return Err(FrameError::InconsistentShape(format!("response status {s}"))),
            };
            let tokens = get_u32s(&mut c)?;
            let visual_tokens = c.u32()?;
            let timings = Timings {
                arrival_ns: c.u64()?,
                vision_done_ns: get_opt(&mut c)?,
                features_received_ns: get_opt(&mut c)?,
                prefill_done_ns: get_opt(&mut c)?,
                decode_done_ns: get_opt(&mut c)?,
            };
            ControlMessage::Response(ResponseMsg {
                request_id,
                status,
                tokens,
                visual_tokens,
                timings,
                error: get_string(&mut c)?,
            })
        }
        KIND_ABORT => ControlMessage::Abort(Abort {
            request_id: c.u64()?,
            reason: get_string(&mut c)?,
        }),
        k => return Err(FrameError::InconsistentShape(format!("unknown control kind {k}"))),
    };
    if c.remaining() != 0 {
        return Err(FrameError::InconsistentShape(format!("{} trailing body bytes", c.remaining())));
    }
    Ok(msg)
}

pub fn decode_control(bytes: &[u8]) -> Result<(ControlMessage, usize), FrameError> {
    let header = parse_header(bytes, &[CONTROL_MAGIC])?;
    let end = HEADER_LEN + header.body_len;
    if bytes.len() < end {
        return Err(FrameError::Truncated);
    }
    Ok((decode_control_body(&bytes[HEADER_LEN..end])?, end))
}
