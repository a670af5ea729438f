//! Wall-clock spans per request and stage.

use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// Nanoseconds since the Unix epoch from a monotonic source: the system time
/// is sampled once per process and advanced by an `Instant`.
pub fn now_ns() -> u64 {
    static ANCHOR: OnceLock<(u64, Instant)> = OnceLock::new();
    let (epoch_ns, start) = ANCHOR.get_or_init(|| {
        let epoch = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        (epoch.as_nanos() as u64, Instant::now())
    });
    epoch_ns + start.elapsed().as_nanos() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Encode, route, shuffle and project one tile.
    Vision,
    /// From frame enqueue to the bytes reaching the socket.
    Transmit,
    Prefill,
    Decode,
}

impl Stage {
    pub fn is_vision(self) -> bool {
        self == Stage::Vision
    }

    pub fn is_language(self) -> bool {
        matches!(self, Stage::Prefill | Stage::Decode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub request_id: u64,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile: Option<u32>,
    pub start_ns: u64,
    pub end_ns: u64,
}

impl Span {
    /// Open-interval intersection; touching endpoints do not overlap.
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start_ns < other.end_ns && other.start_ns < self.end_ns
    }
}

/// Append-only span log shared by every server thread.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    spans: Arc<Mutex<Vec<Span>>>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, span: Span) {
        self.spans.lock().expect("trace lock").push(span);
    }

    pub fn span(&self, request_id: u64, stage: Stage, tile: Option<u32>, start_ns: u64, end_ns: u64) {
        self.record(Span {
            request_id,
            stage,
            tile,
            start_ns,
            end_ns,
        });
    }

    /// All spans ordered by start time, then request and stage.
    pub fn spans(&self) -> Vec<Span> {
        let mut out = self.spans.lock().expect("trace lock").clone();
        out.sort_by_key(|s| (s.start_ns, s.end_ns, s.request_id, s.tile));
        out
    }

    pub fn len(&self) -> usize {
        self.spans.lock().expect("trace lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// First pair of a vision span and a language span from different requests
/// that overlap in time.
pub fn find_cross_request_overlap(spans: &[Span]) -> Option<(Span, Span)> {
    let mut vision: Vec<&Span> = spans.iter().filter(|s| s.stage.is_vision()).collect();
    let mut language: Vec<&Span> = spans.iter().filter(|s| s.stage.is_language()).collect();
    vision.sort_by_key(|s| s.start_ns);
    language.sort_by_key(|s| s.start_ns);
    for v in &vision {
        for l in &language {
            if l.start_ns >= v.end_ns {
                break;
            }
            if v.request_id != l.request_id && v.overlaps(l) {
                return Some((**v, **l));
            }
        }
    }
    None
}

pub fn write_trace<W: Write>(mut w: W, spans: &[Span]) -> std::io::Result<()> {
    for s in spans {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(r: R) -> std::io::Result<Vec<Span>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(id: u64, stage: Stage, a: u64, b: u64) -> Span {
        Span {
            request_id: id,
            stage,
            tile: None,
            start_ns: a,
            end_ns: b,
        }
    }

    #[test]
    fn clock_is_monotone() {
        let a = now_ns();
        let b = now_ns();
        assert!(b >= a);
        assert!(a > 1_500_000_000_000_000_000);
    }

    #[test]
    fn overlap_detection() {
        let spans = vec![
            span(1, Stage::Vision, 0, 10),
            span(1, Stage::Prefill, 5, 12),
            span(2, Stage::Vision, 12, 20),
            span(1, Stage::Decode, 12, 15),
        ];
        let (v, l) = find_cross_request_overlap(&spans).unwrap();
        assert_eq!((v.request_id, l.request_id), (2, 1));
        let serial = vec![span(1, Stage::Vision, 0, 10), span(2, Stage::Prefill, 10, 12)];
        assert!(find_cross_request_overlap(&serial).is_none());
    }

    #[test]
    fn jsonl_round_trip() {
        let spans = vec![span(1, Stage::Vision, 0, 10), span(2, Stage::Decode, 3, 4)];
        let mut buf = Vec::new();
        write_trace(&mut buf, &spans).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"request_id":1,"stage":"vision","start_ns":0,"end_ns":10}"#));
        assert_eq!(read_trace(buf.as_slice()).unwrap(), spans);
    }
}
