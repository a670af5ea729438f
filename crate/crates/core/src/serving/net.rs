//! Listener, connection and shutdown plumbing shared by the servers.

use std::io::{BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use log::{debug, warn};

use crate::transport::{write_message, ControlMessage, TransportError, WireMessage};

/// How often blocked loops re-check the stop flag.
pub(crate) const POLL: Duration = Duration::from_millis(20);

/// Stop flag plus every stream and thread a server owns.
#[derive(Debug, Clone, Default)]
pub(crate) struct Lifecycle {
    stop: Arc<AtomicBool>,
    streams: Arc<Mutex<Vec<TcpStream>>>,
    threads: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl Lifecycle {
    pub fn stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    pub fn track(&self, stream: &TcpStream) {
        if let Ok(clone) = stream.try_clone() {
            self.streams.lock().expect("stream list").push(clone);
        }
    }

    pub fn spawn(&self, name: &str, f: impl FnOnce() + Send + 'static) {
        let handle = std::thread::Builder::new()
            .name(name.into())
            .spawn(f)
            .expect("spawn server thread");
        self.threads.lock().expect("thread list").push(handle);
    }

    fn stop(&self, listeners: &[SocketAddr]) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        for addr in listeners {
            // Wakes a blocked accept.
            let _ = TcpStream::connect_timeout(addr, Duration::from_millis(200));
        }
        for s in self.streams.lock().expect("stream list").drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        // Threads may spawn more threads while we join; drain until empty.
        loop {
            let batch: Vec<JoinHandle<()>> = self.threads.lock().expect("thread list").drain(..).collect();
            if batch.is_empty() {
                break;
            }
            for h in batch {
                if h.join().is_err() {
                    warn!("server thread panicked");
                }
            }
            for s in self.streams.lock().expect("stream list").drain(..) {
                let _ = s.shutdown(Shutdown::Both);
            }
        }
    }
}

/// A running server. Dropping it stops every thread.
#[derive(Debug)]
pub struct ServerHandle {
    name: &'static str,
    addrs: Vec<SocketAddr>,
    life: Lifecycle,
}

impl ServerHandle {
    pub(crate) fn new(name: &'static str, addrs: Vec<SocketAddr>, life: Lifecycle) -> Self {
        Self { name, addrs, life }
    }

    /// Bound addresses, in the order the server documents.
    pub fn addrs(&self) -> &[SocketAddr] {
        &self.addrs
    }

    pub fn addr(&self) -> SocketAddr {
        self.addrs[0]
    }

    /// Blocks until the server is stopped from another thread. Used by the CLI.
    pub fn wait(&self) {
        while !self.life.stopped() {
            std::thread::sleep(Duration::from_millis(200));
        }
    }

    pub fn shutdown(self) {}
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        debug!("stopping {}", self.name);
        self.life.stop(&self.addrs);
    }
}

pub(crate) fn bind(addr: impl ToSocketAddrs) -> std::io::Result<(TcpListener, SocketAddr)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}

/// Accepts connections until stopped, handing each to `on_conn` on its own thread.
pub(crate) fn accept_loop(
    life: &Lifecycle,
    name: &'static str,
    listener: TcpListener,
    nodelay: bool,
    on_conn: impl Fn(TcpStream) + Send + Sync + 'static,
) {
    let on_conn = Arc::new(on_conn);
    let inner = life.clone();
    life.spawn(name, move || {
        for conn in listener.incoming() {
            if inner.stopped() {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    warn!("{name}: accept failed: {e}");
                    continue;
                }
            };
            let _ = stream.set_nodelay(nodelay);
            inner.track(&stream);
            let f = on_conn.clone();
            inner.spawn(name, move || f(stream));
        }
    });
}

/// Writer thread for control messages on one connection.
pub(crate) fn spawn_writer(life: &Lifecycle, stream: TcpStream) -> Sender<ControlMessage> {
    let (tx, rx) = channel::<ControlMessage>();
    let inner = life.clone();
    life.spawn("conn-writer", move || writer_loop(&inner, stream, rx));
    tx
}

fn writer_loop(life: &Lifecycle, stream: TcpStream, rx: Receiver<ControlMessage>) {
    let mut w = BufWriter::new(stream);
    loop {
        match rx.recv_timeout(POLL) {
            Ok(msg) => {
                let sent = write_message(&mut w, &WireMessage::Control(msg)).and_then(|_| Ok(w.flush()?));
                if let Err(e) = sent {
                    debug!("reply connection closed: {e}");
                    return;
                }
            }
            Err(RecvTimeoutError::Timeout) if life.stopped() => return,
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
    }
}

/// True for errors that just mean the peer went away.
pub(crate) fn is_disconnect(e: &TransportError) -> bool {
    match e {
        TransportError::Closed => true,
        TransportError::Io(io) => matches!(
            io.kind(),
            std::io::ErrorKind::ConnectionReset
                | std::io::ErrorKind::ConnectionAborted
                | std::io::ErrorKind::BrokenPipe
                | std::io::ErrorKind::UnexpectedEof
                | std::io::ErrorKind::NotConnected
        ),
        TransportError::Frame(_) => false,
    }
}
