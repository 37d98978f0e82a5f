//! Websocket bridge for the operator console: one envelope per text
//! message, same schema and control topics as the TCP transport.
//!
//! Each connection is subscribed to the console topics on arrival.
//! `pose/frames` is thinned to at most one frame per
//! [`WsOptions::frame_interval_ms`] of bus time; everything else is
//! forwarded untouched.

use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tungstenite::{Message, WebSocket};

use super::proxy::Proxy;
use super::{topics, Bus, BusError, BusMessage, Endpoint};

const POLL: Duration = Duration::from_millis(15);

#[derive(Debug, Clone)]
pub struct WsOptions {
    pub subscriptions: Vec<String>,
    pub frame_interval_ms: u64,
}

impl Default for WsOptions {
    fn default() -> Self {
        WsOptions {
            subscriptions: [
                topics::GAME_STATE,
                topics::POSE_CLASSIFIED,
                topics::POSE_FRAMES,
                topics::PERIPHERAL_ACK,
                topics::BUS_DIAGNOSTICS,
            ]
            .map(String::from)
            .to_vec(),
            frame_interval_ms: 100,
        }
    }
}

pub struct WsServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl WsServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(self) {}
}

impl Drop for WsServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn serve_ws(bus: &Bus, addr: impl ToSocketAddrs, options: WsOptions) -> Result<WsServer, BusError> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let thread = {
        let bus = bus.clone();
        let stop = stop.clone();
        thread::Builder::new().name("bus-ws-accept".into()).spawn(move || {
            while !stop.load(Ordering::SeqCst) && !bus.is_closed() {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        let bus = bus.clone();
                        let options = options.clone();
                        let stop = stop.clone();
                        let _ = thread::Builder::new()
                            .name(format!("bus-ws-{peer}"))
                            .spawn(move || serve_console(bus, stream, peer, options, stop));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                    Err(e) => {
                        log::error!("websocket accept failed: {e}");
                        thread::sleep(POLL);
                    }
                }
            }
        })?
    };
    log::info!("console bridge listening on ws://{addr}");
    Ok(WsServer { addr, stop, thread: Some(thread) })
}

#[allow(clippy::result_large_err)]
fn send(ws: &mut WebSocket<TcpStream>, msg: &BusMessage) -> Result<(), tungstenite::Error> {
    ws.send(Message::text(serde_json::to_string(msg).expect("envelope serializes")))
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut))
}

fn serve_console(bus: Bus, stream: TcpStream, peer: SocketAddr, options: WsOptions, stop: Arc<AtomicBool>) {
    let _ = stream.set_nonblocking(false);
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            log::warn!("{peer}: websocket handshake failed: {e}");
            return;
        }
    };
    let _ = ws.get_ref().set_read_timeout(Some(POLL));
    let proxy = match bus.register_fresh("console").map(|handle| Proxy { handle }) {
        Ok(p) => p,
        Err(_) => return,
    };
    for t in &options.subscriptions {
        let _ = proxy.handle.subscribe(t);
    }
    let id = proxy.handle.node_id().to_string();
    let mut last_frame: Option<u64> = None;

    let reason = 'conn: loop {
        if stop.load(Ordering::SeqCst) || bus.is_closed() {
            let _ = ws.close(None);
            break "bridge shut down".to_string();
        }
        match ws.read() {
            Ok(Message::Text(text)) => match proxy.handle_text(text.as_str()) {
                Ok(Some(reply)) => {
                    if let Err(e) = send(&mut ws, &reply) {
                        break format!("connection lost: {e}");
                    }
                }
                Ok(None) => {}
                Err(e @ BusError::ProtocolError(_)) => {
                    log::warn!("{peer} ({id}): {e}; closing connection");
                    bus.note_protocol_error();
                    let _ = ws.close(None);
                    break e.to_string();
                }
                Err(e) => break e.to_string(),
            },
            Ok(Message::Close(_)) => break "disconnected".to_string(),
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(e) => break format!("connection lost: {e}"),
        }
        while let Some(m) = proxy.handle.try_recv() {
            if m.topic == topics::POSE_FRAMES {
                if last_frame.is_some_and(|t| m.timestamp_ms < t + options.frame_interval_ms) {
                    continue;
                }
                last_frame = Some(m.timestamp_ms);
            }
            if let Err(e) = send(&mut ws, &m) {
                break 'conn format!("connection lost: {e}");
            }
        }
    };
    proxy.handle.depart(&reason);
}
