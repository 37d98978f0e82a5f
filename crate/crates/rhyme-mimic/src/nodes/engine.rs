//! Game master node: runs the rhyme state machine against the bus.
//!
//! Peripheral commands of a transition are published on their topics and the
//! engine waits for every ack of that batch (failed ones included) before
//! feeding `SingingDone` / `EncourageDone` back into the state machine.
//! Imitation timeouts become executor timers and freeze while paused.

use std::collections::{BTreeSet, HashSet};
use std::sync::{Arc, Mutex};

use rhyme_mimic_core::game::{
    start_session, step, Command, GameEvent, GameState, IgnoreReason, LineOutcome, LineProgress, Phase, RhymeScript,
    SessionLog, Transition, WozCommand,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bus::{topics, BusMessage};
use crate::node::{Context, Node};
use crate::nodes::peripheral::{AckStatus, PeripheralAck};
use crate::nodes::pose::PoseClassification;

const TIMEOUT: u64 = 1;
const STATE_TICK: u64 = 2;
const ACK_GUARD: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineOptions {
    pub session_id: String,
    /// Start the session as soon as the node starts; otherwise wait for a
    /// `Start` event on `game/events`.
    pub autostart: bool,
    /// Period of unsolicited `game/state` publications; `None` publishes on
    /// change only.
    pub state_interval_ms: Option<u64>,
    /// Extra time granted to a peripheral beyond its duration hint before
    /// its ack is given up on.
    pub ack_grace_ms: u64,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            session_id: "session".into(),
            autostart: true,
            state_interval_ms: Some(500),
            ack_grace_ms: 10_000,
        }
    }
}

/// Payload of `woz/commands`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WozRequest {
    pub command: WozCommand,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command_id: Option<String>,
}

/// The last event the engine handled, echoed in state updates so an
/// operator sees ignored commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastEvent {
    pub event: GameEvent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ignored: Option<IgnoreReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command_id: Option<String>,
}

/// Payload of `game/state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    pub session_id: String,
    pub script_title: String,
    pub at_ms: u64,
    #[serde(flatten)]
    pub phase: Phase,
    pub paused: bool,
    pub lines_total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyric_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_pose: Option<String>,
    pub progress: LineProgress,
    pub outcomes: Vec<LineOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last: Option<LastEvent>,
}

/// Everything the engine has produced so far.
#[derive(Debug, Clone, Default)]
pub struct EngineOutput {
    pub state: Option<GameState>,
    pub log: SessionLog,
    pub failed_acks: Vec<PeripheralAck>,
    pub diagnostics: Vec<Value>,
    pub duplicate_woz: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Timeout {
    Off,
    Armed { line: usize, deadline: u64 },
    Frozen { line: usize, remaining: u64 },
}

pub struct EngineNode {
    script: RhymeScript,
    options: EngineOptions,
    state: GameState,
    output: Arc<Mutex<EngineOutput>>,
    pending: BTreeSet<u64>,
    timeout: Timeout,
    seen_woz: HashSet<String>,
    last: Option<LastEvent>,
}

impl EngineNode {
    pub fn new(script: RhymeScript, options: EngineOptions) -> Self {
        let state = GameState::new(options.session_id.as_str());
        let output = EngineOutput { log: SessionLog::new(&options.session_id, &script.title), ..Default::default() };
        EngineNode {
            script,
            options,
            state,
            output: Arc::new(Mutex::new(output)),
            pending: BTreeSet::new(),
            timeout: Timeout::Off,
            seen_woz: HashSet::new(),
            last: None,
        }
    }

    pub fn output(&self) -> Arc<Mutex<EngineOutput>> {
        self.output.clone()
    }

    fn out(&self) -> std::sync::MutexGuard<'_, EngineOutput> {
        self.output.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn update(&self, at_ms: u64) -> StateUpdate {
        let line = self.state.phase.line().map(|i| &self.script.lines[i]);
        StateUpdate {
            session_id: self.state.session_id.clone(),
            script_title: self.script.title.clone(),
            at_ms,
            phase: self.state.phase,
            paused: self.state.paused,
            lines_total: self.script.lines.len(),
            lyric_text: line.map(|l| l.lyric_text.clone()),
            target_pose: line.map(|l| l.pose_class.clone()),
            progress: self.state.progress,
            outcomes: self.out().log.outcomes().copied().collect(),
            last: self.last.clone(),
        }
    }

    fn publish_state(&self, ctx: &mut Context<'_>) {
        let update = self.update(ctx.now_ms());
        ctx.publish(topics::GAME_STATE, serde_json::to_value(update).expect("state serializes"));
    }

    fn feed(&mut self, event: GameEvent, command_id: Option<String>, ctx: &mut Context<'_>) {
        let t = step(&self.state, &event, ctx.now_ms(), &self.script);
        if let Some(reason) = t.record.ignored {
            log::debug!("engine: {event:?} ignored ({reason:?})");
        }
        self.last = Some(LastEvent { event, ignored: t.record.ignored, command_id });
        self.apply(t, ctx);
    }

    fn apply(&mut self, t: Transition, ctx: &mut Context<'_>) {
        let changed = t.record.ignored.is_none();
        self.state = t.state;
        {
            let mut out = self.out();
            out.log.push(t.record);
            out.state = Some(self.state.clone());
        }
        let now = ctx.now_ms();
        let mut batch = BTreeSet::new();
        let mut longest_hint = 0;
        for cmd in t.commands {
            match cmd {
                Command::Peripheral(p) => {
                    batch.insert(p.command_id);
                    longest_hint = longest_hint.max(p.duration_hint_ms.unwrap_or(0));
                    ctx.publish(&topics::peripheral(p.kind), serde_json::to_value(&p).expect("command serializes"));
                }
                Command::ArmTimeout { line, duration_ms } => {
                    self.timeout = if self.state.paused {
                        Timeout::Frozen { line, remaining: duration_ms }
                    } else {
                        ctx.set_timer(TIMEOUT, now + duration_ms);
                        Timeout::Armed { line, deadline: now + duration_ms }
                    };
                }
                Command::DisarmTimeout => {
                    ctx.cancel_timer(TIMEOUT);
                    self.timeout = Timeout::Off;
                }
                Command::FreezeTimers => {
                    if let Timeout::Armed { line, deadline } = self.timeout {
                        ctx.cancel_timer(TIMEOUT);
                        self.timeout = Timeout::Frozen { line, remaining: deadline.saturating_sub(now) };
                    }
                }
                Command::ThawTimers => {
                    if let Timeout::Frozen { line, remaining } = self.timeout {
                        ctx.set_timer(TIMEOUT, now + remaining);
                        self.timeout = Timeout::Armed { line, deadline: now + remaining };
                    }
                }
            }
        }
        if !batch.is_empty() {
            // a new batch supersedes acks still owed for the previous one
            self.pending = batch;
            ctx.set_timer(ACK_GUARD, now + longest_hint + self.options.ack_grace_ms);
        } else if changed && !matches!(self.state.phase, Phase::Singing { .. } | Phase::Encouraging { .. }) {
            self.pending.clear();
            ctx.cancel_timer(ACK_GUARD);
        }
        if changed {
            self.publish_state(ctx);
        }
    }

    /// All acks of the current batch are in: the phase they belong to ends.
    fn batch_complete(&mut self, ctx: &mut Context<'_>) {
        ctx.cancel_timer(ACK_GUARD);
        let event = match self.state.phase {
            Phase::Singing { line, .. } => GameEvent::SingingDone { line },
            Phase::Encouraging { line } => GameEvent::EncourageDone { line },
            _ => return,
        };
        self.feed(event, None, ctx);
    }

    fn on_ack(&mut self, payload: &Value, ctx: &mut Context<'_>) {
        let ack = match serde_json::from_value::<PeripheralAck>(payload.clone()) {
            Ok(a) => a,
            Err(_) => {
                log::warn!("engine: peripheral diagnostic {payload}");
                self.out().diagnostics.push(payload.clone());
                return;
            }
        };
        if ack.status == AckStatus::Failed {
            log::warn!("engine: {:?} command {} failed: {:?}", ack.kind, ack.command_id, ack.reason);
            self.out().failed_acks.push(ack.clone());
        }
        if self.pending.remove(&ack.command_id) && self.pending.is_empty() {
            self.batch_complete(ctx);
        }
    }

    fn start(&mut self, ctx: &mut Context<'_>) {
        match start_session(&self.state, &self.script, ctx.now_ms()) {
            Ok(t) => {
                self.last = Some(LastEvent { event: GameEvent::Start, ignored: None, command_id: None });
                self.apply(t, ctx);
            }
            Err(e) => log::warn!("engine: cannot start session: {e}"),
        }
    }
}

impl Node for EngineNode {
    fn name(&self) -> &str {
        "game-engine"
    }

    fn subscriptions(&self) -> Vec<String> {
        [topics::POSE_CLASSIFIED, topics::PERIPHERAL_ACK, topics::WOZ_COMMANDS, topics::GAME_EVENTS]
            .map(String::from)
            .to_vec()
    }

    fn on_start(&mut self, ctx: &mut Context<'_>) {
        if self.options.autostart {
            self.start(ctx);
        } else {
            self.publish_state(ctx);
        }
        if let Some(p) = self.options.state_interval_ms {
            ctx.set_timer_in(STATE_TICK, p);
        }
    }

    fn on_message(&mut self, msg: &BusMessage, ctx: &mut Context<'_>) {
        match msg.topic.as_str() {
            topics::POSE_CLASSIFIED => {
                // only a waiting, running game consumes observations; dropping
                // the rest here keeps the session log free of frame noise
                if !matches!(self.state.phase, Phase::WaitingForImitation { .. }) || self.state.paused {
                    return;
                }
                match serde_json::from_value::<PoseClassification>(msg.payload.clone()) {
                    Ok(c) => self.feed(
                        GameEvent::PoseObserved { label: c.label, score: c.score, timestamp_ms: c.timestamp_ms },
                        None,
                        ctx,
                    ),
                    Err(e) => log::warn!("engine: bad pose/classified payload: {e}"),
                }
            }
            topics::PERIPHERAL_ACK => self.on_ack(&msg.payload, ctx),
            topics::WOZ_COMMANDS => match serde_json::from_value::<WozRequest>(msg.payload.clone()) {
                Ok(req) => {
                    if let Some(id) = &req.command_id {
                        if !self.seen_woz.insert(id.clone()) {
                            log::info!("engine: duplicate WoZ command {id} dropped");
                            self.out().duplicate_woz += 1;
                            return;
                        }
                    }
                    self.feed(GameEvent::Woz { command: req.command }, req.command_id, ctx);
                    if self.last.as_ref().is_some_and(|l| l.ignored.is_some()) {
                        // make the refusal visible to the operator
                        self.publish_state(ctx);
                    }
                }
                Err(e) => log::warn!("engine: bad woz/commands payload from {}: {e}", msg.node_id),
            },
            topics::GAME_EVENTS => match serde_json::from_value::<GameEvent>(msg.payload.clone()) {
                Ok(GameEvent::Start) if self.state.phase == Phase::Idle => self.start(ctx),
                Ok(ev) => self.feed(ev, None, ctx),
                Err(e) => log::warn!("engine: bad game/events payload from {}: {e}", msg.node_id),
            },
            _ => {}
        }
    }

    fn on_timer(&mut self, token: u64, ctx: &mut Context<'_>) {
        match token {
            TIMEOUT => {
                if let Timeout::Armed { line, .. } = self.timeout {
                    self.timeout = Timeout::Off;
                    self.feed(GameEvent::Timeout { line }, None, ctx);
                }
            }
            ACK_GUARD => {
                if !self.pending.is_empty() {
                    log::warn!("engine: no ack for commands {:?}; proceeding", self.pending);
                    self.out().diagnostics.push(serde_json::json!({
                        "diagnostic": "ack_timeout",
                        "command_ids": self.pending.iter().collect::<Vec<_>>(),
                        "at_ms": ctx.now_ms(),
                    }));
                    self.pending.clear();
                    self.batch_complete(ctx);
                }
            }
            STATE_TICK => {
                self.publish_state(ctx);
                if let Some(p) = self.options.state_interval_ms {
                    ctx.set_timer_in(STATE_TICK, p);
                }
            }
            _ => {}
        }
    }

    fn on_stop(&mut self, ctx: &mut Context<'_>) {
        if self.state.phase.is_active() {
            self.feed(GameEvent::Woz { command: WozCommand::Abort }, None, ctx);
        }
    }

    fn is_done(&self) -> bool {
        self.state.phase == Phase::Finished
    }
}
