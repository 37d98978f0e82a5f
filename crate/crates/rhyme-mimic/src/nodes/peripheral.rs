//! Simulated display, audio player, text-to-speech and motion nodes.

use std::collections::{BTreeSet, VecDeque};
use std::sync::{Arc, Mutex};

use rhyme_mimic_core::game::{PeripheralCommand, PeripheralKind, Resource, RhymeScript};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bus::{topics, BusMessage};
use crate::node::{Context, Node};

/// Durations used when a command carries no hint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub display_ms: u64,
    pub audio_ms: u64,
    pub tts_ms: u64,
    pub motion_ms: u64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel { display_ms: 200, audio_ms: 3000, tts_ms: 1500, motion_ms: 2000 }
    }
}

impl LatencyModel {
    /// Audio and motion honour the command's hint; display and speech use
    /// the fixed defaults.
    pub fn duration_ms(&self, cmd: &PeripheralCommand) -> u64 {
        match cmd.kind {
            PeripheralKind::Display => self.display_ms,
            PeripheralKind::Tts => self.tts_ms,
            PeripheralKind::Audio => cmd.duration_hint_ms.unwrap_or(self.audio_ms),
            PeripheralKind::Motion => cmd.duration_hint_ms.unwrap_or(self.motion_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AckStatus {
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeripheralAck {
    pub command_id: u64,
    pub kind: PeripheralKind,
    pub line: usize,
    pub status: AckStatus,
    pub simulated_duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Media references a peripheral can play. Text resources are always
/// playable.
#[derive(Debug, Clone, Default)]
pub struct ResourceCatalog {
    known: Option<BTreeSet<String>>,
}

impl ResourceCatalog {
    /// Accepts every reference.
    pub fn open() -> Self {
        Self::default()
    }

    pub fn of<I: IntoIterator<Item = S>, S: Into<String>>(refs: I) -> Self {
        ResourceCatalog { known: Some(refs.into_iter().map(Into::into).collect()) }
    }

    /// Everything a script references for `kind`.
    pub fn from_script(script: &RhymeScript, kind: PeripheralKind) -> Self {
        let refs = script.lines.iter().filter_map(|l| match kind {
            PeripheralKind::Display => Some(l.image_ref.clone()),
            PeripheralKind::Audio => Some(l.audio_ref.clone()),
            PeripheralKind::Motion => Some(l.gesture().to_string()),
            PeripheralKind::Tts => None,
        });
        Self::of(refs)
    }

    pub fn accepts(&self, resource: &Resource) -> bool {
        match resource {
            Resource::Text(_) => true,
            Resource::Ref(r) => self.known.as_ref().is_none_or(|k| k.contains(r)),
        }
    }
}

/// What a peripheral did, for inspection after a run.
#[derive(Debug, Clone, Default)]
pub struct PeripheralLog {
    pub received: Vec<(u64, PeripheralCommand)>,
    pub acks: Vec<(u64, PeripheralAck)>,
    pub malformed: usize,
}

const BUSY: u64 = 1;

pub struct PeripheralNode {
    name: String,
    kind: PeripheralKind,
    catalog: ResourceCatalog,
    latency: LatencyModel,
    queue: VecDeque<PeripheralCommand>,
    current: Option<(PeripheralCommand, u64)>,
    log: Arc<Mutex<PeripheralLog>>,
}

impl PeripheralNode {
    pub fn new(kind: PeripheralKind, catalog: ResourceCatalog, latency: LatencyModel) -> Self {
        PeripheralNode {
            name: format!("{}-sim", kind.name()),
            kind,
            catalog,
            latency,
            queue: VecDeque::new(),
            current: None,
            log: Arc::default(),
        }
    }

    pub fn log(&self) -> Arc<Mutex<PeripheralLog>> {
        self.log.clone()
    }

    fn ack(
        &self,
        ctx: &mut Context<'_>,
        cmd: &PeripheralCommand,
        status: AckStatus,
        duration: u64,
        reason: Option<String>,
    ) {
        let ack = PeripheralAck {
            command_id: cmd.command_id,
            kind: self.kind,
            line: cmd.line,
            status,
            simulated_duration_ms: duration,
            reason,
        };
        ctx.publish(topics::PERIPHERAL_ACK, serde_json::to_value(&ack).expect("ack serializes"));
        self.log.lock().unwrap_or_else(|e| e.into_inner()).acks.push((ctx.now_ms(), ack));
    }

    /// Starts queued commands until one needs simulated time.
    fn advance(&mut self, ctx: &mut Context<'_>) {
        while self.current.is_none() {
            let Some(cmd) = self.queue.pop_front() else { return };
            if !self.catalog.accepts(&cmd.resource) {
                log::warn!("{}: unknown resource {:?} in command {}", self.name, cmd.resource, cmd.command_id);
                self.ack(ctx, &cmd, AckStatus::Failed, 0, Some("unknown resource".into()));
                continue;
            }
            let duration = self.latency.duration_ms(&cmd);
            ctx.set_timer_in(BUSY, duration);
            self.current = Some((cmd, duration));
        }
    }
}

impl Node for PeripheralNode {
    fn name(&self) -> &str {
        &self.name
    }

    fn subscriptions(&self) -> Vec<String> {
        vec![topics::peripheral(self.kind)]
    }

    fn on_message(&mut self, msg: &BusMessage, ctx: &mut Context<'_>) {
        match serde_json::from_value::<PeripheralCommand>(msg.payload.clone()) {
            Ok(cmd) if cmd.kind == self.kind => {
                log::debug!("{}: command {} ({:?}) at {} ms", self.name, cmd.command_id, cmd.resource, ctx.now_ms());
                self.log.lock().unwrap_or_else(|e| e.into_inner()).received.push((ctx.now_ms(), cmd.clone()));
                self.queue.push_back(cmd);
                self.advance(ctx);
            }
            Ok(cmd) => {
                log::warn!("{}: ignoring command {} for {:?}", self.name, cmd.command_id, cmd.kind);
                self.log.lock().unwrap_or_else(|e| e.into_inner()).malformed += 1;
            }
            Err(e) => {
                log::warn!("{}: malformed command: {e}", self.name);
                self.log.lock().unwrap_or_else(|e| e.into_inner()).malformed += 1;
                ctx.publish(
                    topics::PERIPHERAL_ACK,
                    json!({"diagnostic": "malformed_command", "node_id": ctx.node_id(), "error": e.to_string()}),
                );
            }
        }
    }

    fn on_timer(&mut self, token: u64, ctx: &mut Context<'_>) {
        if token != BUSY {
            return;
        }
        if let Some((cmd, duration)) = self.current.take() {
            self.ack(ctx, &cmd, AckStatus::Done, duration, None);
        }
        self.advance(ctx);
    }
}
