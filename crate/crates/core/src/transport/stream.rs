//! Framed streams over any byte transport, plus per-request tile assembly.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TryRecvError};
use std::thread::JoinHandle;

use thiserror::Error;

use super::control::{decode_control_body, encode_control, ControlMessage, CONTROL_MAGIC};
use super::error::{FrameError, TransportError};
use super::frame::{decode_frame_body, encode_frame, FeatureFrame, FRAME_MAGIC};
use super::wire::{parse_header, HEADER_LEN};

/// Default bound on frames queued but not yet written.
pub const DEFAULT_WINDOW: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    Frame(FeatureFrame),
    Control(ControlMessage),
}

pub fn encode_message(msg: &WireMessage) -> Result<Vec<u8>, FrameError> {
    match msg {
        WireMessage::Frame(f) => encode_frame(f),
        WireMessage::Control(c) => encode_control(c),
    }
}

/// Fills `buf`, returning how many bytes arrived before end of stream.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Reads the next message. `Ok(None)` is a clean end of stream between
/// messages; a stream that ends mid-message is [`TransportError::Closed`].
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<WireMessage>, TransportError> {
    let mut header = [0u8; HEADER_LEN];
    match read_full(r, &mut header) {
        Ok(0) => return Ok(None),
        Ok(n) if n < HEADER_LEN => return Err(TransportError::Closed),
        Ok(_) => {}
        Err(e) if is_reset(&e) => return Err(TransportError::Closed),
        Err(e) => return Err(e.into()),
    }
    let h = parse_header(&header, &[FRAME_MAGIC, CONTROL_MAGIC])?;
    let mut body = vec![0u8; h.body_len];
    match read_full(r, &mut body) {
        Ok(n) if n < h.body_len => return Err(TransportError::Closed),
        Ok(_) => {}
        Err(e) if is_reset(&e) => return Err(TransportError::Closed),
        Err(e) => return Err(e.into()),
    }
    Ok(Some(if h.magic == FRAME_MAGIC {
        WireMessage::Frame(decode_frame_body(&body)?)
    } else {
        WireMessage::Control(decode_control_body(&body)?)
    }))
}

fn is_reset(e: &std::io::Error) -> bool {
    matches!(
        e.kind(),
        ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted | ErrorKind::BrokenPipe | ErrorKind::UnexpectedEof
    )
}

/// Writes one whole message; the caller owns the writer, so messages from a
/// connection never interleave.
pub fn write_message<W: Write>(w: &mut W, msg: &WireMessage) -> Result<(), TransportError> {
    w.write_all(&encode_message(msg)?)?;
    Ok(())
}

/// Buffered reader yielding messages until a clean close.
pub struct MessageReader<R: Read> {
    inner: BufReader<R>,
}

impl<R: Read> MessageReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner: BufReader::with_capacity(1 << 16, inner),
        }
    }

    pub fn next_message(&mut self) -> Result<Option<WireMessage>, TransportError> {
        read_message(&mut self.inner)
    }
}

impl<R: Read> Iterator for MessageReader<R> {
    type Item = Result<WireMessage, TransportError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_message().transpose()
    }
}

type SentHook = Box<dyn FnOnce() + Send>;

struct Outgoing {
    bytes: Vec<u8>,
    on_sent: Option<SentHook>,
}

/// Unidirectional sender with a dedicated writer thread. At most `window`
/// encoded messages wait in the queue; further sends block (backpressure).
pub struct FeatureSender {
    tx: Option<SyncSender<Outgoing>>,
    handle: Option<JoinHandle<Result<u64, TransportError>>>,
}

impl FeatureSender {
    pub fn new<W: Write + Send + 'static>(writer: W, window: usize) -> Self {
        let (tx, rx) = sync_channel::<Outgoing>(window.max(1));
        let handle = std::thread::Builder::new()
            .name("feature-sender".into())
            .spawn(move || writer_loop(BufWriter::with_capacity(1 << 16, writer), rx))
            .expect("spawn sender thread");
        Self {
            tx: Some(tx),
            handle: Some(handle),
        }
    }

    pub fn connect(addr: impl ToSocketAddrs, window: usize, nodelay: bool) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(nodelay)?;
        Ok(Self::new(stream, window))
    }

    fn enqueue(&self, bytes: Vec<u8>, on_sent: Option<SentHook>) -> Result<(), TransportError> {
        let tx = self.tx.as_ref().ok_or(TransportError::Closed)?;
        tx.send(Outgoing { bytes, on_sent }).map_err(|_| TransportError::Closed)
    }

    pub fn send(&self, msg: &WireMessage) -> Result<(), TransportError> {
        self.enqueue(encode_message(msg)?, None)
    }

    /// Sends and runs `on_sent` once the bytes have been handed to the socket.
    pub fn send_with_hook(&self, msg: &WireMessage, on_sent: impl FnOnce() + Send + 'static) -> Result<(), TransportError> {
        self.enqueue(encode_message(msg)?, Some(Box::new(on_sent)))
    }

    pub fn send_frame(&self, frame: &FeatureFrame) -> Result<(), TransportError> {
        self.enqueue(encode_frame(frame)?, None)
    }

    /// Flushes everything queued and returns the number of messages written.
    pub fn close(mut self) -> Result<u64, TransportError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<u64, TransportError> {
        self.tx.take();
        match self.handle.take() {
            Some(h) => h.join().unwrap_or(Err(TransportError::Closed)),
            None => Ok(0),
        }
    }
}

impl Drop for FeatureSender {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

fn writer_loop<W: Write>(mut w: BufWriter<W>, rx: Receiver<Outgoing>) -> Result<u64, TransportError> {
    let mut sent = 0u64;
    let mut hooks: Vec<SentHook> = Vec::new();
    while let Ok(first) = rx.recv() {
        let mut next = Some(first);
        while let Some(out) = next.take() {
            w.write_all(&out.bytes)?;
            sent += 1;
            hooks.extend(out.on_sent);
            next = match rx.try_recv() {
                Ok(m) => Some(m),
                Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => None,
            };
        }
        w.flush()?;
        hooks.drain(..).for_each(|h| h());
    }
    w.flush()?;
    Ok(sent)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("request {request_id}: {reason}")]
pub struct AssemblyError {
    pub request_id: u64,
    pub reason: String,
}

#[derive(Debug)]
struct Partial {
    tiles: Vec<Option<FeatureFrame>>,
    received: usize,
}

/// Collects per-tile frames until every tile of a request has arrived.
#[derive(Debug, Default)]
pub struct RequestAssembler {
    pending: HashMap<u64, Partial>,
}

impl RequestAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a frame; returns the request's frames in tile order once complete.
    /// A malformed frame drops the request's partial state.
    pub fn push(&mut self, frame: FeatureFrame) -> Result<Option<Vec<FeatureFrame>>, AssemblyError> {
        let id = frame.request_id;
        let count = frame.tile_count as usize;
        let fail = |this: &mut Self, reason: String| {
            this.pending.remove(&id);
            Err(AssemblyError { request_id: id, reason })
        };
        if frame.tile_index as usize >= count {
            return fail(self, format!("tile {} of {count}", frame.tile_index));
        }
        let entry = self.pending.entry(id).or_insert_with(|| Partial {
            tiles: vec![None; count],
            received: 0,
        });
        if entry.tiles.len() != count {
            let known = entry.tiles.len();
            return fail(self, format!("tile_count changed from {known} to {count}"));
        }
        let slot = &mut entry.tiles[frame.tile_index as usize];
        if slot.is_some() {
            let index = frame.tile_index;
            return fail(self, format!("duplicate tile {index}"));
        }
        *slot = Some(frame);
        entry.received += 1;
        if entry.received < count {
            return Ok(None);
        }
        let done = self.pending.remove(&id).expect("entry exists");
        Ok(Some(done.tiles.into_iter().map(|t| t.expect("all tiles present")).collect()))
    }

    pub fn abort(&mut self, request_id: u64) -> bool {
        self.pending.remove(&request_id).is_some()
    }

    /// Removes and returns every incomplete request id, sorted.
    pub fn take_partial(&mut self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.pending.drain().map(|(id, _)| id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }
}
