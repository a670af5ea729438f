//! Vision side of the split topology: takes image submissions, batches tiles,
//! runs encoder, router and projector, and streams one frame per tile to the
//! language server as soon as the tile is done.

use std::collections::HashSet;
use std::io::BufReader;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::model::{Engine, Request};
use super::net::{accept_loop, bind, is_disconnect, spawn_writer, Lifecycle, ServerHandle, POLL};
use super::trace::{now_ns, Stage};
use crate::transport::{
    read_message, Abort, ControlMessage, FeatureSender, ResponseMsg, TransportError, WireMessage, DEFAULT_WINDOW,
};
use crate::types::ImageTensor;
use crate::vision::RatePolicy;

#[derive(Debug, Clone)]
pub struct VisionServerOptions {
    pub workers: usize,
    pub batch_tiles: usize,
    pub batch_window: Duration,
    pub window: usize,
    pub nodelay: bool,
}

impl Default for VisionServerOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            batch_tiles: 8,
            batch_window: Duration::from_millis(2),
            window: DEFAULT_WINDOW,
            nodelay: true,
        }
    }
}

struct TileJob {
    request_id: u64,
    arrival_ns: u64,
    index: u32,
    count: u32,
    tile: ImageTensor,
    reply: Sender<ControlMessage>,
}

/// Lazily connected feature stream; reconnects after a failure.
struct Downstream {
    addr: String,
    window: usize,
    nodelay: bool,
    sender: Mutex<Option<FeatureSender>>,
}

impl Downstream {
    fn send(&self, msg: &WireMessage, on_sent: impl FnOnce() + Send + 'static) -> Result<(), TransportError> {
        let mut guard = self.sender.lock().expect("downstream lock");
        if guard.is_none() {
            *guard = Some(FeatureSender::connect(self.addr.as_str(), self.window, self.nodelay)?);
        }
        let result = guard.as_ref().expect("connected").send_with_hook(msg, on_sent);
        if result.is_err() {
            // Dropping joins the dead writer; the next send reconnects.
            guard.take();
        }
        result
    }
}

struct Shared {
    engine: Engine,
    policy: RatePolicy,
    downstream: Downstream,
    /// Requests already reported as failed; their remaining tiles are skipped.
    failed: Mutex<HashSet<u64>>,
}

impl Shared {
    fn fail(&self, request_id: u64, arrival_ns: u64, reason: String, reply: &Sender<ControlMessage>) {
        if !self.failed.lock().expect("failed set").insert(request_id) {
            return;
        }
        warn!("vision: request {request_id} failed: {reason}");
        let abort = WireMessage::Control(ControlMessage::Abort(Abort {
            request_id,
            reason: reason.clone(),
        }));
        if let Err(e) = self.downstream.send(&abort, || {}) {
            debug!("vision: abort for {request_id} not delivered: {e}");
        }
        let _ = reply.send(ControlMessage::Response(ResponseMsg::failed(request_id, arrival_ns, reason)));
    }

    fn is_failed(&self, request_id: u64) -> bool {
        self.failed.lock().expect("failed set").contains(&request_id)
    }
}

pub struct VisionServer;

impl VisionServer {
    /// Listens for `Submit` messages on `addr` and streams frames to the
    /// language server's feature port at `downstream`.
    pub fn start(
        addr: impl ToSocketAddrs,
        downstream: impl Into<String>,
        engine: Engine,
        policy: RatePolicy,
        options: VisionServerOptions,
    ) -> std::io::Result<ServerHandle> {
        let (listener, local) = bind(addr)?;
        let life = Lifecycle::default();
        let shared = Arc::new(Shared {
            engine,
            policy,
            downstream: Downstream {
                addr: downstream.into(),
                window: options.window,
                nodelay: options.nodelay,
                sender: Mutex::new(None),
            },
            failed: Mutex::new(HashSet::new()),
        });
        let (tx, rx) = channel::<TileJob>();
        let rx = Arc::new(Mutex::new(rx));
        for w in 0..options.workers.max(1) {
            let (inner, shared, rx, opts) = (life.clone(), shared.clone(), rx.clone(), options.clone());
            life.spawn(&format!("vision-worker-{w}"), move || worker(&inner, &shared, &rx, &opts));
        }
        let (inner, conn_shared) = (life.clone(), shared.clone());
        accept_loop(&life, "vision-conn", listener, options.nodelay, move |stream| {
            read_submits(&inner, &conn_shared, stream, tx.clone())
        });
        Ok(ServerHandle::new("vision", vec![local], life))
    }
}

fn read_submits(life: &Lifecycle, shared: &Shared, stream: TcpStream, jobs: Sender<TileJob>) {
    let reply = match stream.try_clone() {
        Ok(s) => spawn_writer(life, s),
        Err(e) => {
            warn!("vision: cannot clone stream: {e}");
            return;
        }
    };
    let mut reader = BufReader::new(stream);
    loop {
        let submit = match read_message(&mut reader) {
            Ok(Some(WireMessage::Control(ControlMessage::Submit(s)))) => s,
            Ok(Some(other)) => {
                warn!("vision: ignoring unexpected message {other:?}");
                continue;
            }
            Ok(None) => return,
            Err(e) => {
                if !is_disconnect(&e) {
                    warn!("vision: dropping connection: {e}");
                }
                return;
            }
        };
        let (id, arrival) = (submit.request_id, submit.arrival_ns);
        let tiles = Request::from_submit(submit)
            .and_then(|r| r.validate().map(|_| r))
            .and_then(|r| shared.engine.model.vision.tile(&r.image));
        let tiles = match tiles {
            Ok(t) => t,
            Err(e) => {
                shared.fail(id, arrival, e.to_string(), &reply);
                continue;
            }
        };
        let count = tiles.len() as u32;
        for (index, tile) in tiles.tiles.into_iter().enumerate() {
            let job = TileJob {
                request_id: id,
                arrival_ns: arrival,
                index: index as u32,
                count,
                tile,
                reply: reply.clone(),
            };
            if jobs.send(job).is_err() {
                return;
            }
        }
    }
}

/// Takes up to `batch_tiles` jobs, waiting at most `batch_window` after the first.
fn next_batch(life: &Lifecycle, rx: &Mutex<Receiver<TileJob>>, opts: &VisionServerOptions) -> Option<Vec<TileJob>> {
    let rx = rx.lock().expect("tile queue");
    let first = loop {
        match rx.recv_timeout(POLL) {
            Ok(_) if life.stopped() => return None,
            Ok(j) => break j,
            Err(RecvTimeoutError::Timeout) if life.stopped() => return None,
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return None,
        }
    };
    let deadline = Instant::now() + opts.batch_window;
    let mut batch = vec![first];
    while batch.len() < opts.batch_tiles {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.try_recv() {
            Ok(j) => batch.push(j),
            Err(_) if left.is_zero() => break,
            Err(_) => match rx.recv_timeout(left) {
                Ok(j) => batch.push(j),
                Err(_) => break,
            },
        }
    }
    Some(batch)
}

fn worker(life: &Lifecycle, shared: &Shared, rx: &Mutex<Receiver<TileJob>>, opts: &VisionServerOptions) {
    while let Some(batch) = next_batch(life, rx, opts) {
        debug!("vision: batch of {} tiles", batch.len());
        for job in batch {
            if life.stopped() {
                return;
            }
            if shared.is_failed(job.request_id) {
                continue;
            }
            process(shared, job);
        }
    }
}

fn process(shared: &Shared, job: TileJob) {
    let engine = &shared.engine;
    let frame = match engine.vision_frame(job.request_id, job.index, job.count, &job.tile, &shared.policy) {
        Ok(f) => f,
        Err(e) => return shared.fail(job.request_id, job.arrival_ns, e.to_string(), &job.reply),
    };
    let trace = engine.trace.clone();
    let (id, index) = (job.request_id, job.index);
    let start = now_ns();
    let sent = shared
        .downstream
        .send(&WireMessage::Frame(frame), move || trace.span(id, Stage::Transmit, Some(index), start, now_ns()));
    if let Err(e) = sent {
        shared.fail(id, job.arrival_ns, format!("language server unreachable: {e}"), &job.reply);
    }
}
