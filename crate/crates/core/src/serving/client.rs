//! Client side of both topologies.

use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError};
use std::thread::JoinHandle;
use std::time::Duration;

use log::warn;

use super::model::Request;
use crate::transport::{
    read_message, write_message, ControlMessage, Expect, ResponseMsg, TransportError, WireMessage,
};

/// Where a deployment accepts requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoints {
    Monolith { addr: SocketAddr },
    /// `vision` takes `Submit`; `language` is the language server's client port.
    Split { vision: SocketAddr, language: SocketAddr },
}

/// Sends requests and collects responses from every connection into one queue.
pub struct Client {
    submit: BufWriter<TcpStream>,
    expect: Option<BufWriter<TcpStream>>,
    responses: Receiver<ResponseMsg>,
    streams: Vec<TcpStream>,
    readers: Vec<JoinHandle<()>>,
}

impl Client {
    pub fn connect(endpoints: &Endpoints, nodelay: bool) -> Result<Self, TransportError> {
        let (tx, rx) = channel();
        let open = |addr: &SocketAddr| -> Result<TcpStream, TransportError> {
            let s = TcpStream::connect(addr)?;
            s.set_nodelay(nodelay)?;
            Ok(s)
        };
        let conns = match endpoints {
            Endpoints::Monolith { addr } => vec![open(addr)?],
            Endpoints::Split { vision, language } => vec![open(vision)?, open(language)?],
        };
        let mut readers = Vec::new();
        for conn in &conns {
            let tx = tx.clone();
            let mut reader = BufReader::new(conn.try_clone()?);
            readers.push(
                std::thread::Builder::new()
                    .name("client-reader".into())
                    .spawn(move || loop {
                        match read_message(&mut reader) {
                            Ok(Some(WireMessage::Control(ControlMessage::Response(r)))) => {
                                if tx.send(r).is_err() {
                                    return;
                                }
                            }
                            Ok(Some(other)) => warn!("client: ignoring unexpected message {other:?}"),
                            Ok(None) | Err(_) => return,
                        }
                    })
                    .expect("spawn client reader"),
            );
        }
        let submit = BufWriter::new(conns[0].try_clone()?);
        let expect = conns.get(1).map(|c| c.try_clone().map(BufWriter::new)).transpose()?;
        Ok(Self {
            submit,
            expect,
            responses: rx,
            streams: conns,
            readers,
        })
    }

    pub fn submit(&mut self, request: &Request) -> Result<(), TransportError> {
        // Prompt first, so it is already waiting when the frames land.
        if let Some(w) = self.expect.as_mut() {
            let expect = Expect {
                request_id: request.request_id,
                arrival_ns: request.arrival_ns,
                decode_len: request.decode_len,
                prompt: request.prompt.clone(),
            };
            write_message(w, &WireMessage::Control(ControlMessage::Expect(expect)))?;
            w.flush()?;
        }
        write_message(
            &mut self.submit,
            &WireMessage::Control(ControlMessage::Submit(request.to_submit())),
        )?;
        self.submit.flush()?;
        Ok(())
    }

    /// Next response, or `None` after `timeout` or once every connection closed.
    /// A response that has already arrived, without waiting.
    pub fn try_recv(&self) -> Option<ResponseMsg> {
        self.responses.try_recv().ok()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<ResponseMsg> {
        match self.responses.recv_timeout(timeout) {
            Ok(r) => Some(r),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => None,
        }
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        for s in &self.streams {
            let _ = s.shutdown(Shutdown::Both);
        }
        for h in self.readers.drain(..) {
            let _ = h.join();
        }
    }
}
