//! Topic-based publish/subscribe bus.
//!
//! Every node owns a bounded inbox. Publishing copies the message into the
//! inbox of each current subscriber while holding the bus lock, so every
//! subscriber sees each publisher's messages in publication order. There is
//! no global order across publishers and nothing is persisted.
//!
//! Remote nodes reach the same bus over TCP ([`tcp`]) or websockets
//! ([`ws`]); both speak newline/message-delimited JSON [`BusMessage`]
//! envelopes.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::clock::Clock;

mod proxy;
pub mod tcp;
pub mod ws;

pub use tcp::{connect_tcp, serve_tcp, RemoteNode, TcpServer};
pub use ws::{serve_ws, WsServer};

pub const DEFAULT_INBOX_CAPACITY: usize = 1024;
/// Node id the bus itself publishes diagnostics under.
pub const BUS_NODE_ID: &str = "bus";

pub mod topics {
    pub const POSE_FRAMES: &str = "pose/frames";
    pub const POSE_CLASSIFIED: &str = "pose/classified";
    pub const GAME_STATE: &str = "game/state";
    pub const GAME_EVENTS: &str = "game/events";
    pub const PERIPHERAL_DISPLAY: &str = "peripheral/display";
    pub const PERIPHERAL_AUDIO: &str = "peripheral/audio";
    pub const PERIPHERAL_TTS: &str = "peripheral/tts";
    pub const PERIPHERAL_MOTION: &str = "peripheral/motion";
    pub const PERIPHERAL_ACK: &str = "peripheral/ack";
    pub const WOZ_COMMANDS: &str = "woz/commands";

    pub const DIRECTORY: [&str; 10] = [
        POSE_FRAMES,
        POSE_CLASSIFIED,
        GAME_STATE,
        GAME_EVENTS,
        PERIPHERAL_DISPLAY,
        PERIPHERAL_AUDIO,
        PERIPHERAL_TTS,
        PERIPHERAL_MOTION,
        PERIPHERAL_ACK,
        WOZ_COMMANDS,
    ];

    pub const BUS_DIAGNOSTICS: &str = "bus/diagnostics";
    pub const BUS_HELLO: &str = "bus/hello";
    pub const BUS_WELCOME: &str = "bus/welcome";
    pub const BUS_SUBSCRIBE: &str = "bus/subscribe";
    pub const BUS_SUBSCRIBED: &str = "bus/subscribed";
    pub const BUS_UNSUBSCRIBE: &str = "bus/unsubscribe";
    pub const BUS_UNSUBSCRIBED: &str = "bus/unsubscribed";

    /// Envelopes exchanged between a remote client and its proxy; never
    /// routed through the bus.
    pub const CONTROL: [&str; 6] =
        [BUS_HELLO, BUS_WELCOME, BUS_SUBSCRIBE, BUS_SUBSCRIBED, BUS_UNSUBSCRIBE, BUS_UNSUBSCRIBED];

    pub fn is_known(topic: &str) -> bool {
        DIRECTORY.contains(&topic) || topic == BUS_DIAGNOSTICS
    }

    pub fn is_control(topic: &str) -> bool {
        CONTROL.contains(&topic)
    }

    /// Messages the overflow policy never drops.
    pub fn is_critical(topic: &str) -> bool {
        topic == GAME_EVENTS || topic == WOZ_COMMANDS
    }

    pub fn peripheral(kind: rhyme_mimic_core::game::PeripheralKind) -> String {
        format!("peripheral/{}", kind.name())
    }
}

/// Wire and in-process envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusMessage {
    pub topic: String,
    pub seq: u64,
    pub timestamp_ms: u64,
    pub node_id: String,
    pub payload: Value,
}

#[derive(Debug, thiserror::Error)]
pub enum BusError {
    #[error("bus is closed")]
    BusClosed,
    #[error("topic must not be empty")]
    EmptyTopic,
    #[error("connection refused: {0}")]
    ConnectRefused(std::io::Error),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("timed out waiting for the bus")]
    Timeout,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Wakes waiters whenever any attached inbox receives a message.
#[derive(Debug, Default)]
pub struct Notifier {
    count: Mutex<u64>,
    cv: Condvar,
}

impl Notifier {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn notify(&self) {
        *lock(&self.count) += 1;
        self.cv.notify_all();
    }

    pub fn current(&self) -> u64 {
        *lock(&self.count)
    }

    /// Blocks until the counter moves past `seen` or `timeout` elapses;
    /// returns the counter.
    pub fn wait(&self, seen: u64, timeout: Duration) -> u64 {
        let guard = lock(&self.count);
        let (guard, _) = self.cv.wait_timeout_while(guard, timeout, |c| *c == seen).unwrap_or_else(|e| e.into_inner());
        *guard
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Bounded FIFO of messages for one node.
#[derive(Debug)]
pub struct Inbox {
    queue: Mutex<VecDeque<BusMessage>>,
    ready: Condvar,
    capacity: usize,
    dropped: AtomicU64,
    waker: Mutex<Option<Arc<Notifier>>>,
}

impl Inbox {
    pub fn new(capacity: usize) -> Arc<Self> {
        Arc::new(Inbox {
            queue: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            capacity: capacity.max(1),
            dropped: AtomicU64::new(0),
            waker: Mutex::new(None),
        })
    }

    /// Enqueues `msg`, evicting the oldest pose frame (or failing that the
    /// oldest non-critical message) when full. Critical messages are
    /// always accepted. Returns the number of messages dropped.
    pub fn push(&self, msg: BusMessage) -> u64 {
        let mut dropped = 0;
        {
            let mut q = lock(&self.queue);
            if q.len() >= self.capacity {
                let victim = q
                    .iter()
                    .position(|m| m.topic == topics::POSE_FRAMES)
                    .or_else(|| q.iter().position(|m| !topics::is_critical(&m.topic)));
                match victim {
                    Some(i) => {
                        q.remove(i);
                        dropped = 1;
                    }
                    None if !topics::is_critical(&msg.topic) => {
                        self.dropped.fetch_add(1, Ordering::Relaxed);
                        return 1;
                    }
                    None => {}
                }
            }
            q.push_back(msg);
        }
        self.dropped.fetch_add(dropped, Ordering::Relaxed);
        self.ready.notify_all();
        if let Some(w) = lock(&self.waker).as_ref() {
            w.notify();
        }
        dropped
    }

    pub fn try_recv(&self) -> Option<BusMessage> {
        lock(&self.queue).pop_front()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<BusMessage> {
        let deadline = Instant::now() + timeout;
        let mut q = lock(&self.queue);
        loop {
            if let Some(m) = q.pop_front() {
                return Some(m);
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            q = self.ready.wait_timeout(q, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
    }

    pub fn len(&self) -> usize {
        lock(&self.queue).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn set_waker(&self, notifier: Arc<Notifier>) {
        *lock(&self.waker) = Some(notifier);
    }
}

/// Counters describing bus health.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BusDiagnostics {
    pub published: u64,
    pub dropped: u64,
    pub unknown_topics: BTreeSet<String>,
    pub departures: Vec<String>,
    pub protocol_errors: u64,
}

struct Entry {
    subscriptions: BTreeSet<String>,
    inbox: Arc<Inbox>,
}

#[derive(Default)]
struct State {
    closed: bool,
    nodes: BTreeMap<String, Entry>,
    next_instance: u64,
}

struct Inner {
    clock: Clock,
    capacity: usize,
    state: Mutex<State>,
    diagnostics: Mutex<BusDiagnostics>,
    own_seq: AtomicU64,
}

/// Shared bus; clones refer to the same bus.
#[derive(Clone)]
pub struct Bus {
    inner: Arc<Inner>,
}

impl Bus {
    pub fn new(clock: Clock) -> Self {
        Self::with_capacity(clock, DEFAULT_INBOX_CAPACITY)
    }

    pub fn with_capacity(clock: Clock, capacity: usize) -> Self {
        Bus {
            inner: Arc::new(Inner {
                clock,
                capacity,
                state: Mutex::new(State::default()),
                diagnostics: Mutex::new(BusDiagnostics::default()),
                own_seq: AtomicU64::new(0),
            }),
        }
    }

    pub fn clock(&self) -> &Clock {
        &self.inner.clock
    }

    /// Registers a node. `name` is used as the node id when free, otherwise
    /// a `#n` suffix makes it unique.
    pub fn register(&self, name: &str) -> Result<NodeHandle, BusError> {
        let mut st = lock(&self.inner.state);
        if st.closed {
            return Err(BusError::BusClosed);
        }
        let id = if st.nodes.contains_key(name) || name == BUS_NODE_ID {
            st.next_instance += 1;
            format!("{name}#{}", st.next_instance)
        } else {
            name.to_string()
        };
        Ok(self.insert(&mut st, id))
    }

    /// Registers a node that always gets a never-before-used id, so a
    /// reconnecting client cannot receive its predecessor's messages.
    pub fn register_fresh(&self, name: &str) -> Result<NodeHandle, BusError> {
        let mut st = lock(&self.inner.state);
        if st.closed {
            return Err(BusError::BusClosed);
        }
        st.next_instance += 1;
        let id = format!("{name}#{}", st.next_instance);
        Ok(self.insert(&mut st, id))
    }

    fn insert(&self, st: &mut State, id: String) -> NodeHandle {
        let inbox = Inbox::new(self.inner.capacity);
        st.nodes.insert(id.clone(), Entry { subscriptions: BTreeSet::new(), inbox: inbox.clone() });
        NodeHandle { bus: self.clone(), id, inbox, seq: AtomicU64::new(0), registered: true }
    }

    fn unregister(&self, id: &str) -> Option<BTreeSet<String>> {
        lock(&self.inner.state).nodes.remove(id).map(|e| e.subscriptions)
    }

    /// Removes a remote node and announces its departure on
    /// `bus/diagnostics`, and on `peripheral/ack` when it served a
    /// peripheral topic.
    pub fn depart(&self, id: &str, reason: &str) {
        let Some(subs) = self.unregister(id) else { return };
        lock(&self.inner.diagnostics).departures.push(id.to_string());
        log::warn!("node {id} departed: {reason}");
        let topics: Vec<&String> = subs.iter().collect();
        let _ = self.publish_system(
            topics::BUS_DIAGNOSTICS,
            json!({"event": "node_departed", "node_id": id, "reason": reason, "subscriptions": topics}),
        );
        let peripherals: Vec<&String> =
            subs.iter().filter(|t| t.starts_with("peripheral/") && *t != topics::PERIPHERAL_ACK).collect();
        if !peripherals.is_empty() {
            let _ = self.publish_system(
                topics::PERIPHERAL_ACK,
                json!({"diagnostic": "peripheral_departed", "node_id": id, "topics": peripherals, "reason": reason}),
            );
        }
    }

    fn publish_system(&self, topic: &str, payload: Value) -> Result<u64, BusError> {
        let seq = self.inner.own_seq.fetch_add(1, Ordering::SeqCst) + 1;
        self.deliver(BusMessage {
            topic: topic.into(),
            seq,
            timestamp_ms: self.inner.clock.now_ms(),
            node_id: BUS_NODE_ID.into(),
            payload,
        })
        .map(|_| seq)
    }

    fn deliver(&self, msg: BusMessage) -> Result<(), BusError> {
        if msg.topic.is_empty() {
            return Err(BusError::EmptyTopic);
        }
        let known = topics::is_known(&msg.topic);
        let mut dropped = 0;
        {
            let st = lock(&self.inner.state);
            if st.closed {
                return Err(BusError::BusClosed);
            }
            for e in st.nodes.values().filter(|e| e.subscriptions.contains(&msg.topic)) {
                dropped += e.inbox.push(msg.clone());
            }
        }
        let mut d = lock(&self.inner.diagnostics);
        d.published += 1;
        d.dropped += dropped;
        if !known && d.unknown_topics.insert(msg.topic.clone()) {
            log::warn!("message on unknown topic {:?}", msg.topic);
        }
        Ok(())
    }

    pub fn diagnostics(&self) -> BusDiagnostics {
        lock(&self.inner.diagnostics).clone()
    }

    pub(crate) fn note_protocol_error(&self) {
        lock(&self.inner.diagnostics).protocol_errors += 1;
    }

    pub fn node_ids(&self) -> Vec<String> {
        lock(&self.inner.state).nodes.keys().cloned().collect()
    }

    /// Ids of nodes currently subscribed to `topic`.
    pub fn subscribers(&self, topic: &str) -> Vec<String> {
        lock(&self.inner.state)
            .nodes
            .iter()
            .filter(|(_, e)| e.subscriptions.contains(topic))
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Refuses further publishes and registrations.
    pub fn close(&self) {
        lock(&self.inner.state).closed = true;
    }

    pub fn is_closed(&self) -> bool {
        lock(&self.inner.state).closed
    }

    fn set_subscription(&self, id: &str, topic: &str, on: bool) -> Result<(), BusError> {
        if topic.is_empty() {
            return Err(BusError::EmptyTopic);
        }
        let mut st = lock(&self.inner.state);
        if st.closed {
            return Err(BusError::BusClosed);
        }
        let entry = st.nodes.get_mut(id).ok_or(BusError::BusClosed)?;
        if on {
            entry.subscriptions.insert(topic.into());
        } else {
            entry.subscriptions.remove(topic);
        }
        Ok(())
    }
}

/// Anything that can act as a node on the bus, local or remote.
pub trait Endpoint: Send {
    fn node_id(&self) -> &str;
    fn publish(&self, topic: &str, payload: Value) -> Result<u64, BusError>;
    fn subscribe(&self, topic: &str) -> Result<(), BusError>;
    fn unsubscribe(&self, topic: &str) -> Result<(), BusError>;
    fn inbox(&self) -> &Arc<Inbox>;

    fn try_recv(&self) -> Option<BusMessage> {
        self.inbox().try_recv()
    }

    fn recv_timeout(&self, timeout: Duration) -> Option<BusMessage> {
        self.inbox().recv_timeout(timeout)
    }
}

/// A registered in-process node. Dropping the handle unregisters it.
pub struct NodeHandle {
    bus: Bus,
    id: String,
    inbox: Arc<Inbox>,
    seq: AtomicU64,
    registered: bool,
}

impl NodeHandle {
    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn subscriptions(&self) -> Vec<String> {
        lock(&self.bus.inner.state)
            .nodes
            .get(&self.id)
            .map(|e| e.subscriptions.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// Unregisters with a departure diagnostic, as for a lost remote peer.
    pub fn depart(mut self, reason: &str) {
        self.registered = false;
        self.bus.depart(&self.id, reason);
    }
}

impl Endpoint for NodeHandle {
    fn node_id(&self) -> &str {
        &self.id
    }

    fn publish(&self, topic: &str, payload: Value) -> Result<u64, BusError> {
        if topic.is_empty() {
            return Err(BusError::EmptyTopic);
        }
        // the bus lock inside deliver orders concurrent publishes; taking
        // the seq first keeps it increasing in delivery order per handle
        // because a handle is used by a single publisher at a time
        let seq = self.seq.fetch_add(1, Ordering::SeqCst) + 1;
        self.bus.deliver(BusMessage {
            topic: topic.into(),
            seq,
            timestamp_ms: self.bus.inner.clock.now_ms(),
            node_id: self.id.clone(),
            payload,
        })?;
        Ok(seq)
    }

    fn subscribe(&self, topic: &str) -> Result<(), BusError> {
        self.bus.set_subscription(&self.id, topic, true)
    }

    fn unsubscribe(&self, topic: &str) -> Result<(), BusError> {
        self.bus.set_subscription(&self.id, topic, false)
    }

    fn inbox(&self) -> &Arc<Inbox> {
        &self.inbox
    }
}

impl Drop for NodeHandle {
    fn drop(&mut self) {
        if self.registered {
            self.bus.unregister(&self.id);
        }
    }
}
