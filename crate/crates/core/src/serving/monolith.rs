//! Baseline topology: tiles, encoder, projector and language model run back to
//! back on a single executor, so vision and language work share one budget.

use std::io::BufReader;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};

use log::{debug, warn};

use super::model::{Engine, Request};
use super::net::{accept_loop, bind, is_disconnect, spawn_writer, Lifecycle, ServerHandle, POLL};
use super::trace::now_ns;
use crate::error::{invalid, Result};
use crate::transport::{read_message, ControlMessage, ResponseMsg, Submit, Timings, WireMessage};
use crate::types::{CompressionRate, ImageTensor};
use crate::vision::RatePolicy;

/// Runs one request end to end. Features pass through the BF16 frame codec
/// exactly as they would on the split topologies.
pub fn serve_request(engine: &Engine, request: &Request) -> ResponseMsg {
    match try_serve(engine, request) {
        Ok(r) => r,
        Err(e) => ResponseMsg::failed(request.request_id, request.arrival_ns, e.to_string()),
    }
}

fn try_serve(engine: &Engine, request: &Request) -> Result<ResponseMsg> {
    request.validate()?;
    let policy = RatePolicy::Fixed(CompressionRate::Quarter);
    let tiles = engine.model.vision.tile(&request.image)?;
    let count = tiles.len() as u32;
    let mut grids = Vec::with_capacity(tiles.len());
    for (i, tile) in tiles.tiles.iter().enumerate() {
        let frame = engine.vision_frame(request.request_id, i as u32, count, tile, &policy)?;
        grids.push(frame.to_grid().map_err(|e| invalid(e.to_string()))?);
    }
    let vision_done = now_ns();
    let timings = Timings {
        arrival_ns: request.arrival_ns,
        vision_done_ns: Some(vision_done),
        features_received_ns: Some(vision_done),
        ..Timings::default()
    };
    engine.language(request.request_id, grids, &request.prompt, request.decode_len, timings)
}

/// In-process monolith over a request list, in order. A malformed request
/// yields a failed response; the rest proceed.
pub fn run_monolith(engine: &Engine, requests: &[Request]) -> Vec<ResponseMsg> {
    requests.iter().map(|r| serve_request(engine, r)).collect()
}

impl Request {
    pub fn to_submit(&self) -> Submit {
        Submit {
            request_id: self.request_id,
            arrival_ns: self.arrival_ns,
            decode_len: self.decode_len,
            prompt: self.prompt.clone(),
            height: self.image.height() as u32,
            width: self.image.width() as u32,
            pixels: self.image.to_u8(),
        }
    }

    /// Rebuilds a request from the wire. Pixels are 8-bit, so images made
    /// with [`ImageTensor::from_u8`] survive the trip exactly.
    pub fn from_submit(s: Submit) -> Result<Self> {
        let image = ImageTensor::from_u8(s.height as usize, s.width as usize, &s.pixels)?;
        Ok(Self {
            request_id: s.request_id,
            image,
            prompt: s.prompt,
            decode_len: s.decode_len,
            arrival_ns: s.arrival_ns,
        })
    }
}

struct Job {
    submit: Submit,
    reply: Sender<ControlMessage>,
}

/// TCP front end for the monolith: `Submit` in, `Response` out, one executor.
pub struct MonolithServer;

impl MonolithServer {
    pub fn start(addr: impl ToSocketAddrs, engine: Engine, nodelay: bool) -> std::io::Result<ServerHandle> {
        let (listener, local) = bind(addr)?;
        let life = Lifecycle::default();
        let (tx, rx) = channel::<Job>();
        {
            let inner = life.clone();
            life.spawn("monolith-exec", move || executor(&inner, &engine, rx));
        }
        let inner = life.clone();
        accept_loop(&life, "monolith-conn", listener, nodelay, move |stream| {
            read_submits(&inner, stream, tx.clone())
        });
        Ok(ServerHandle::new("monolith", vec![local], life))
    }
}

fn read_submits(life: &Lifecycle, stream: TcpStream, jobs: Sender<Job>) {
    let reply = match stream.try_clone() {
        Ok(s) => spawn_writer(life, s),
        Err(e) => {
            warn!("monolith: cannot clone stream: {e}");
            return;
        }
    };
    let mut reader = BufReader::new(stream);
    loop {
        match read_message(&mut reader) {
            Ok(Some(WireMessage::Control(ControlMessage::Submit(submit)))) => {
                let job = Job {
                    submit,
                    reply: reply.clone(),
                };
                if jobs.send(job).is_err() {
                    return;
                }
            }
            Ok(Some(other)) => warn!("monolith: ignoring unexpected message {other:?}"),
            Ok(None) => return,
            Err(e) => {
                if !is_disconnect(&e) {
                    warn!("monolith: dropping connection: {e}");
                }
                return;
            }
        }
    }
}

fn executor(life: &Lifecycle, engine: &Engine, rx: Receiver<Job>) {
    loop {
        let job = match rx.recv_timeout(POLL) {
            Ok(_) if life.stopped() => return,
            Ok(j) => j,
            Err(RecvTimeoutError::Timeout) if life.stopped() => return,
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => return,
        };
        let id = job.submit.request_id;
        let arrival = job.submit.arrival_ns;
        let response = match Request::from_submit(job.submit) {
            Ok(req) => serve_request(engine, &req),
            Err(e) => ResponseMsg::failed(id, arrival, e.to_string()),
        };
        if job.reply.send(ControlMessage::Response(response)).is_err() {
            debug!("monolith: client for request {id} is gone");
        }
    }
}
