//! Node runtime: single-threaded handlers driven by messages and timers.
//!
//! An [`Executor`] owns a set of nodes and their bus endpoints. It delivers
//! every pending message first and only then fires the earliest timer. Under
//! a virtual clock, firing a timer moves time straight to its deadline, so a
//! run is a deterministic function of its inputs and finishes as fast as the
//! handlers execute. Under the real clock the executor sleeps until the next
//! deadline or message.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;

use crate::bus::{Bus, BusError, BusMessage, Endpoint, Notifier};
use crate::clock::Clock;

const MAX_WAIT: Duration = Duration::from_millis(50);

pub trait Node: Send {
    fn name(&self) -> &str;
    fn subscriptions(&self) -> Vec<String>;
    fn on_start(&mut self, _ctx: &mut Context<'_>) {}
    fn on_message(&mut self, msg: &BusMessage, ctx: &mut Context<'_>);
    fn on_timer(&mut self, _token: u64, _ctx: &mut Context<'_>) {}
    /// Called once when the run is asked to stop, before remaining messages
    /// are drained.
    fn on_stop(&mut self, _ctx: &mut Context<'_>) {}
    fn is_done(&self) -> bool {
        false
    }
}

enum TimerOp {
    Set { token: u64, at_ms: u64 },
    Cancel(u64),
}

/// What a handler may do besides mutating its own node.
pub struct Context<'a> {
    endpoint: &'a dyn Endpoint,
    now_ms: u64,
    ops: &'a mut Vec<TimerOp>,
}

impl Context<'_> {
    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn node_id(&self) -> &str {
        self.endpoint.node_id()
    }

    pub fn publish(&mut self, topic: &str, payload: Value) -> Option<u64> {
        match self.endpoint.publish(topic, payload) {
            Ok(seq) => Some(seq),
            Err(e) => {
                log::debug!("{}: publish on {topic} failed: {e}", self.endpoint.node_id());
                None
            }
        }
    }

    /// Arms timer `token` for `at_ms`, replacing any pending one with the
    /// same token.
    pub fn set_timer(&mut self, token: u64, at_ms: u64) {
        self.ops.push(TimerOp::Set { token, at_ms });
    }

    pub fn set_timer_in(&mut self, token: u64, delay_ms: u64) {
        self.set_timer(token, self.now_ms.saturating_add(delay_ms));
    }

    pub fn cancel_timer(&mut self, token: u64) {
        self.ops.push(TimerOp::Cancel(token));
    }
}

struct Slot {
    node: Box<dyn Node>,
    endpoint: Box<dyn Endpoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Every awaited node reported done.
    Done,
    /// The clock passed the run deadline.
    Deadline,
    /// Virtual time with nothing left to deliver and no pending timer.
    Idle,
    /// The stop flag was raised.
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOutcome {
    pub reason: StopReason,
    pub now_ms: u64,
}

pub struct Executor {
    clock: Clock,
    notifier: Arc<Notifier>,
    slots: Vec<Slot>,
    awaited: Vec<usize>,
    timers: BinaryHeap<Reverse<(u64, u64, usize, u64)>>,
    live: HashMap<(usize, u64), u64>,
    order: u64,
    stop: Arc<AtomicBool>,
    deadline_ms: Option<u64>,
    wait_for_remote: bool,
}

impl Executor {
    pub fn new(clock: Clock) -> Self {
        Executor {
            clock,
            notifier: Notifier::new(),
            slots: Vec::new(),
            awaited: Vec::new(),
            timers: BinaryHeap::new(),
            live: HashMap::new(),
            order: 0,
            stop: Arc::new(AtomicBool::new(false)),
            deadline_ms: None,
            wait_for_remote: false,
        }
    }

    /// Registers `node` on `bus` under its own name and subscribes it.
    pub fn add_local(&mut self, bus: &Bus, node: impl Node + 'static) -> Result<usize, BusError> {
        let handle = bus.register(node.name())?;
        self.add(node, handle)
    }

    /// Adds a node speaking through `endpoint`, which may be remote.
    pub fn add(&mut self, node: impl Node + 'static, endpoint: impl Endpoint + 'static) -> Result<usize, BusError> {
        for t in node.subscriptions() {
            endpoint.subscribe(&t)?;
        }
        endpoint.inbox().set_waker(self.notifier.clone());
        self.slots.push(Slot { node: Box::new(node), endpoint: Box::new(endpoint) });
        Ok(self.slots.len() - 1)
    }

    /// The run ends once every awaited node reports done.
    pub fn await_node(&mut self, index: usize) {
        self.awaited.push(index);
    }

    pub fn set_deadline_ms(&mut self, deadline_ms: Option<u64>) {
        self.deadline_ms = deadline_ms;
    }

    /// Under the virtual clock, keep waiting for messages from other
    /// threads (remote clients) instead of ending the run when idle.
    pub fn set_wait_for_remote(&mut self, wait: bool) {
        self.wait_for_remote = wait;
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    /// Shares a stop flag with other executors.
    pub fn set_stop_flag(&mut self, flag: Arc<AtomicBool>) {
        self.stop = flag;
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    fn with_context(&mut self, i: usize, f: impl FnOnce(&mut dyn Node, &mut Context<'_>)) {
        let now_ms = self.clock.now_ms();
        let mut ops = Vec::new();
        {
            let slot = &mut self.slots[i];
            let mut ctx = Context { endpoint: slot.endpoint.as_ref(), now_ms, ops: &mut ops };
            f(slot.node.as_mut(), &mut ctx);
        }
        for op in ops {
            match op {
                TimerOp::Set { token, at_ms } => {
                    self.order += 1;
                    self.live.insert((i, token), self.order);
                    self.timers.push(Reverse((at_ms, self.order, i, token)));
                }
                TimerOp::Cancel(token) => {
                    self.live.remove(&(i, token));
                }
            }
        }
    }

    fn next_timer(&mut self) -> Option<u64> {
        while let Some(Reverse((at, order, i, token))) = self.timers.peek().copied() {
            if self.live.get(&(i, token)) == Some(&order) {
                return Some(at);
            }
            self.timers.pop();
        }
        None
    }

    fn fire_next(&mut self) {
        if let Some(Reverse((_, _, i, token))) = self.timers.pop() {
            self.live.remove(&(i, token));
            self.with_context(i, |n, ctx| n.on_timer(token, ctx));
        }
    }

    fn deliver_pending(&mut self) -> bool {
        let mut any = false;
        for i in 0..self.slots.len() {
            while let Some(m) = self.slots[i].endpoint.try_recv() {
                any = true;
                self.with_context(i, |n, ctx| n.on_message(&m, ctx));
            }
        }
        any
    }

    fn awaited_done(&self) -> bool {
        !self.awaited.is_empty() && self.awaited.iter().all(|&i| self.slots[i].node.is_done())
    }

    fn outcome(&self, reason: StopReason) -> RunOutcome {
        RunOutcome { reason, now_ms: self.clock.now_ms() }
    }

    pub fn run(&mut self) -> RunOutcome {
        for i in 0..self.slots.len() {
            self.with_context(i, |n, ctx| n.on_start(ctx));
        }
        let mut stopping = false;
        loop {
            let seen = self.notifier.current();
            if !stopping && self.stop.load(Ordering::SeqCst) {
                stopping = true;
                for i in 0..self.slots.len() {
                    self.with_context(i, |n, ctx| n.on_stop(ctx));
                }
            }
            if self.deliver_pending() {
                continue;
            }
            if stopping {
                return self.outcome(StopReason::Stopped);
            }
            if self.awaited_done() {
                return self.outcome(StopReason::Done);
            }
            let next = self.next_timer();
            if let (Some(at), Some(deadline)) = (next, self.deadline_ms) {
                if at > deadline {
                    return self.outcome(StopReason::Deadline);
                }
            }
            match &self.clock {
                Clock::Virtual(v) => match next {
                    Some(at) if !self.wait_for_remote || at <= v.now_ms() => {
                        v.advance_to(at);
                        self.fire_next();
                    }
                    Some(at) => {
                        // give other threads a moment before jumping ahead
                        if self.notifier.wait(seen, Duration::from_millis(1)) == seen {
                            v.advance_to(at);
                            self.fire_next();
                        }
                    }
                    None if self.wait_for_remote => {
                        self.notifier.wait(seen, MAX_WAIT);
                    }
                    None => return self.outcome(StopReason::Idle),
                },
                Clock::Real(r) => {
                    let now = r.now_ms();
                    if self.deadline_ms.is_some_and(|d| now > d) {
                        return self.outcome(StopReason::Deadline);
                    }
                    match next {
                        Some(at) if at <= now => self.fire_next(),
                        Some(at) => {
                            self.notifier.wait(seen, Duration::from_millis(at - now).min(MAX_WAIT));
                        }
                        None => {
                            self.notifier.wait(seen, MAX_WAIT);
                        }
                    }
                }
            }
        }
    }
}
