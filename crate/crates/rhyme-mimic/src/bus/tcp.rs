//! TCP transport: newline-delimited JSON envelopes.
//!
//! A client may open with `bus/hello` (its `node_id` field names the node)
//! and is answered with `bus/welcome` carrying the assigned id. Subscriptions
//! are requested with `bus/subscribe` / `bus/unsubscribe` envelopes whose
//! payload is `{"topic": ...}` and confirmed with `bus/subscribed` /
//! `bus/unsubscribed` once effective. Every other envelope is published on
//! the bus under the client's node id.

use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::proxy::{control, parse_envelope, Proxy};
use super::{lock, topics, Bus, BusError, BusMessage, Endpoint, Inbox, DEFAULT_INBOX_CAPACITY};

const POLL: Duration = Duration::from_millis(20);
const CONTROL_TIMEOUT: Duration = Duration::from_secs(5);

/// Listening side of the TCP transport.
pub struct TcpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl TcpServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting; existing connections run until their peer leaves.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        self.stop_accepting();
    }
}

pub fn serve_tcp(bus: &Bus, addr: impl ToSocketAddrs) -> Result<TcpServer, BusError> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let thread = {
        let bus = bus.clone();
        let stop = stop.clone();
        thread::Builder::new().name("bus-tcp-accept".into()).spawn(move || {
            while !stop.load(Ordering::SeqCst) && !bus.is_closed() {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        let bus = bus.clone();
                        let _ = thread::Builder::new()
                            .name(format!("bus-tcp-{peer}"))
                            .spawn(move || serve_connection(bus, stream, peer));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                    Err(e) => {
                        log::error!("accept failed: {e}");
                        thread::sleep(POLL);
                    }
                }
            }
        })?
    };
    log::info!("bus listening on tcp://{addr}");
    Ok(TcpServer { addr, stop, thread: Some(thread) })
}

fn write_line(w: &Mutex<TcpStream>, msg: &BusMessage) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(msg).map_err(std::io::Error::other)?;
    line.push(b'\n');
    lock(w).write_all(&line)
}

fn serve_connection(bus: Bus, stream: TcpStream, peer: SocketAddr) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_nodelay(true);
    let Ok(write_half) = stream.try_clone() else { return };
    let writer = Arc::new(Mutex::new(write_half));
    let mut reader = BufReader::new(stream);
    let mut line = String::new();

    let first = loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) | Err(_) => return,
            Ok(_) if line.trim().is_empty() => continue,
            Ok(_) => break line.clone(),
        }
    };
    let (proxy, reply) = match Proxy::open(&bus, "remote", first.trim()) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("{peer}: {e}; closing connection");
            bus.note_protocol_error();
            let _ = lock(&writer).shutdown(Shutdown::Both);
            return;
        }
    };
    let id = proxy.handle.node_id().to_string();
    if let Some(r) = reply {
        if write_line(&writer, &r).is_err() {
            bus.depart(&id, "connection lost");
            return;
        }
    }

    let done = Arc::new(AtomicBool::new(false));
    let pump = {
        let inbox = proxy.handle.inbox().clone();
        let writer = writer.clone();
        let done = done.clone();
        thread::spawn(move || {
            while !done.load(Ordering::SeqCst) {
                if let Some(m) = inbox.recv_timeout(POLL) {
                    if write_line(&writer, &m).is_err() {
                        break;
                    }
                }
            }
        })
    };

    let reason = loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => break "disconnected".to_string(),
            Err(e) => break format!("connection lost: {e}"),
            Ok(_) if line.trim().is_empty() => continue,
            Ok(_) => match proxy.handle_text(line.trim()) {
                Ok(Some(r)) => {
                    if let Err(e) = write_line(&writer, &r) {
                        break format!("connection lost: {e}");
                    }
                }
                Ok(None) => {}
                Err(e @ BusError::ProtocolError(_)) => {
                    log::warn!("{peer} ({id}): {e}; closing connection");
                    bus.note_protocol_error();
                    break e.to_string();
                }
                Err(e) => break e.to_string(),
            },
        }
    };
    done.store(true, Ordering::SeqCst);
    let _ = lock(&writer).shutdown(Shutdown::Both);
    let _ = pump.join();
    proxy.handle.depart(&reason);
}

/// Client side of the TCP transport.
pub struct RemoteNode {
    id: String,
    writer: Mutex<TcpStream>,
    inbox: Arc<Inbox>,
    control: Mutex<mpsc::Receiver<BusMessage>>,
    seq: AtomicU64,
    origin: Instant,
    reader: Option<JoinHandle<()>>,
}

/// Connects to a bus served by [`serve_tcp`] and announces `node_id`.
pub fn connect_tcp(addr: impl ToSocketAddrs, node_id: &str) -> Result<RemoteNode, BusError> {
    let stream = TcpStream::connect(addr).map_err(BusError::ConnectRefused)?;
    stream.set_nodelay(true)?;
    let read_half = stream.try_clone()?;
    let inbox = Inbox::new(DEFAULT_INBOX_CAPACITY);
    let (tx, rx) = mpsc::channel();
    let reader = {
        let inbox = inbox.clone();
        thread::spawn(move || {
            for line in BufReader::new(read_half).lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                match parse_envelope(&line) {
                    Ok(m) if topics::is_control(&m.topic) => {
                        let _ = tx.send(m);
                    }
                    Ok(m) => {
                        inbox.push(m);
                    }
                    Err(e) => {
                        log::warn!("dropping connection after bad envelope from server: {e}");
                        break;
                    }
                }
            }
        })
    };
    let mut node = RemoteNode {
        id: node_id.into(),
        writer: Mutex::new(stream),
        inbox,
        control: Mutex::new(rx),
        seq: AtomicU64::new(0),
        origin: Instant::now(),
        reader: Some(reader),
    };
    node.send(&control(topics::BUS_HELLO, json!({})).with_node(node_id))?;
    let welcome = node.await_control(topics::BUS_WELCOME, None)?;
    node.id = welcome
        .payload
        .get("node_id")
        .and_then(Value::as_str)
        .ok_or_else(|| BusError::ProtocolError("welcome without node_id".into()))?
        .into();
    Ok(node)
}

impl BusMessage {
    fn with_node(mut self, node_id: &str) -> Self {
        self.node_id = node_id.into();
        self
    }
}

impl RemoteNode {
    fn send(&self, msg: &BusMessage) -> Result<(), BusError> {
        write_line(&self.writer, msg).map_err(|_| BusError::BusClosed)
    }

    fn await_control(&self, topic: &str, arg: Option<&str>) -> Result<BusMessage, BusError> {
        let rx = lock(&self.control);
        let deadline = Instant::now() + CONTROL_TIMEOUT;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(left) {
                Ok(m)
                    if m.topic == topic
                        && arg.is_none_or(|a| m.payload.get("topic").and_then(Value::as_str) == Some(a)) =>
                {
                    return Ok(m)
                }
                Ok(_) => continue,
                Err(mpsc::RecvTimeoutError::Timeout) => return Err(BusError::Timeout),
                Err(mpsc::RecvTimeoutError::Disconnected) => return Err(BusError::BusClosed),
            }
        }
    }

    fn request(&self, verb: &str, reply: &str, topic: &str) -> Result<(), BusError> {
        if topic.is_empty() {
            return Err(BusError::EmptyTopic);
        }
        self.send(&control(verb, json!({ "topic": topic })).with_node(&self.id))?;
        self.await_control(reply, Some(topic)).map(|_| ())
    }

    /// Sends a raw line, bypassing envelope encoding. Test hook for
    /// exercising server-side protocol handling.
    pub fn send_raw(&self, line: &str) -> Result<(), BusError> {
        let mut w = lock(&self.writer);
        w.write_all(line.as_bytes()).and_then(|_| w.write_all(b"\n")).map_err(|_| BusError::BusClosed)
    }

    /// Closes the connection abruptly.
    pub fn disconnect(mut self) {
        self.close();
    }

    fn close(&mut self) {
        let _ = lock(&self.writer).shutdown(Shutdown::Both);
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
    }
}

impl Endpoint for RemoteNode {
    fn node_id(&self) -> &str {
        &self.id
    }

    fn publish(&self, topic: &str, payload: Value) -> Result<u64, BusError> {
        if topic.is_empty() {
            return Err(BusError::EmptyTopic);
        }
        let seq = self.seq.fetch_add(1, Ordering::SeqCst) + 1;
        self.send(&BusMessage {
            topic: topic.into(),
            seq,
            timestamp_ms: self.origin.elapsed().as_millis() as u64,
            node_id: self.id.clone(),
            payload,
        })?;
        Ok(seq)
    }

    fn subscribe(&self, topic: &str) -> Result<(), BusError> {
        self.request(topics::BUS_SUBSCRIBE, topics::BUS_SUBSCRIBED, topic)
    }

    fn unsubscribe(&self, topic: &str) -> Result<(), BusError> {
        self.request(topics::BUS_UNSUBSCRIBE, topics::BUS_UNSUBSCRIBED, topic)
    }

    fn inbox(&self) -> &Arc<Inbox> {
        &self.inbox
    }
}

impl Drop for RemoteNode {
    fn drop(&mut self) {
        self.close();
    }
}
