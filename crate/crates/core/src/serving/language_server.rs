//! Language side of the split topology: assembles per-tile frames, pairs them
//! with the client's prompt, then fuses, prefills and decodes.

use std::collections::HashMap;
use std::io::BufReader;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};

use log::{debug, warn};

use super::model::{frames_to_tiles, Engine};
use super::net::{accept_loop, bind, is_disconnect, spawn_writer, Lifecycle, ServerHandle, POLL};
use super::trace::now_ns;
use crate::transport::{
    read_message, ControlMessage, Expect, FeatureFrame, RequestAssembler, ResponseMsg, Timings, WireMessage,
};

#[derive(Default)]
struct Pending {
    expect: Option<(Expect, Sender<ControlMessage>)>,
    frames: Option<(Vec<FeatureFrame>, u64)>,
    failed: Option<String>,
}

struct Job {
    expect: Expect,
    reply: Sender<ControlMessage>,
    frames: Vec<FeatureFrame>,
    received_ns: u64,
}

/// Per-request rendezvous of the client's `Expect` and the vision frames.
/// A request is owned here until complete, then moves to the worker.
struct Table {
    pending: Mutex<HashMap<u64, Pending>>,
    jobs: Sender<Job>,
}

impl Table {
    fn update(&self, id: u64, f: impl FnOnce(&mut Pending)) {
        let mut pending = self.pending.lock().expect("request table");
        let entry = pending.entry(id).or_default();
        f(entry);
        if entry.failed.is_some() && entry.expect.is_some() {
            let p = pending.remove(&id).expect("entry exists");
            let (expect, reply) = p.expect.expect("checked");
            let reason = p.failed.expect("checked");
            let _ = reply.send(ControlMessage::Response(ResponseMsg::failed(id, expect.arrival_ns, reason)));
        } else if entry.failed.is_none() && entry.expect.is_some() && entry.frames.is_some() {
            let p = pending.remove(&id).expect("entry exists");
            let (expect, reply) = p.expect.expect("checked");
            let (frames, received_ns) = p.frames.expect("checked");
            let _ = self.jobs.send(Job {
                expect,
                reply,
                frames,
                received_ns,
            });
        }
    }

    fn fail(&self, id: u64, reason: String) {
        warn!("language: request {id} failed: {reason}");
        self.update(id, |p| {
            p.frames = None;
            p.failed.get_or_insert(reason);
        });
    }
}

pub struct LanguageServer;

impl LanguageServer {
    /// Returns a handle whose `addrs()` are `[feature port, client port]`.
    pub fn start(
        feature_addr: impl ToSocketAddrs,
        client_addr: impl ToSocketAddrs,
        engine: Engine,
        nodelay: bool,
    ) -> std::io::Result<ServerHandle> {
        let (feature_listener, feature_local) = bind(feature_addr)?;
        let (client_listener, client_local) = bind(client_addr)?;
        let life = Lifecycle::default();
        let (tx, rx) = channel::<Job>();
        let table = Arc::new(Table {
            pending: Mutex::new(HashMap::new()),
            jobs: tx,
        });
        {
            let inner = life.clone();
            life.spawn("language-worker", move || worker(&inner, &engine, rx));
        }
        let t = table.clone();
        accept_loop(&life, "language-features", feature_listener, nodelay, move |stream| {
            read_features(&t, stream)
        });
        let (inner, t) = (life.clone(), table);
        accept_loop(&life, "language-clients", client_listener, nodelay, move |stream| {
            read_expects(&inner, &t, stream)
        });
        Ok(ServerHandle::new("language", vec![feature_local, client_local], life))
    }
}

fn read_features(table: &Table, stream: TcpStream) {
    let mut reader = BufReader::new(stream);
    let mut assembler = RequestAssembler::new();
    let reason = loop {
        match read_message(&mut reader) {
            Ok(Some(WireMessage::Frame(frame))) => match assembler.push(frame) {
                Ok(Some(frames)) => {
                    let (id, now) = (frames[0].request_id, now_ns());
                    table.update(id, |p| p.frames = Some((frames, now)));
                }
                Ok(None) => {}
                Err(e) => table.fail(e.request_id, e.to_string()),
            },
            Ok(Some(WireMessage::Control(ControlMessage::Abort(a)))) => {
                assembler.abort(a.request_id);
                table.fail(a.request_id, format!("aborted by vision server: {}", a.reason));
            }
            Ok(Some(other)) => warn!("language: ignoring unexpected message {other:?}"),
            Ok(None) => break "feature stream closed".to_string(),
            Err(e) => {
                if !is_disconnect(&e) {
                    warn!("language: feature stream error: {e}");
                }
                break format!("feature stream lost: {e}");
            }
        }
    };
    for id in assembler.take_partial() {
        table.fail(id, format!("incomplete request: {reason}"));
    }
}

fn read_expects(life: &Lifecycle, table: &Table, stream: TcpStream) {
    let reply = match stream.try_clone() {
        Ok(s) => spawn_writer(life, s),
        Err(e) => {
            warn!("language: cannot clone stream: {e}");
            return;
        }
    };
    let mut reader = BufReader::new(stream);
    loop {
        match read_message(&mut reader) {
            Ok(Some(WireMessage::Control(ControlMessage::Expect(expect)))) => {
                let reply = reply.clone();
                table.update(expect.request_id, move |p| p.expect = Some((expect, reply)));
            }
            Ok(Some(other)) => warn!("language: ignoring unexpected message {other:?}"),
            Ok(None) => return,
            Err(e) => {
                if !is_disconnect(&e) {
                    warn!("language: dropping client connection: {e}");
                }
                return;
            }
        }
    }
}

fn worker(life: &Lifecycle, engine: &Engine, rx: Receiver<Job>) {
    loop {
        let job = match rx.recv_timeout(POLL) {
            Ok(_) if life.stopped() => return,
            Ok(j) => j,
            Err(RecvTimeoutError::Timeout) if life.stopped() => return,
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => return,
        };
        let e = &job.expect;
        let timings = Timings {
            arrival_ns: e.arrival_ns,
            features_received_ns: Some(job.received_ns),
            ..Timings::default()
        };
        let response = match frames_to_tiles(&job.frames) {
            Ok(tiles) => engine
                .language(e.request_id, tiles, &e.prompt, e.decode_len, timings)
                .unwrap_or_else(|err| ResponseMsg::failed(e.request_id, e.arrival_ns, err.to_string())),
            Err(err) => ResponseMsg::failed(e.request_id, e.arrival_ns, err.to_string()),
        };
        if job.reply.send(ControlMessage::Response(response)).is_err() {
            debug!("language: client for request {} is gone", e.request_id);
        }
    }
}
