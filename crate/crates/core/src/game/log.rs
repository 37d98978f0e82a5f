use alloc::string::String;
use alloc::vec::Vec;

use super::{step, Command, GameError, GameEvent, GameState, IgnoreReason, Phase, RhymeScript};

/// Phase plus pause flag, recorded before and after every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateSnapshot {
    pub phase: Phase,
    pub paused: bool,
}

/// Result of one line, written when the game leaves it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LineOutcome {
    pub line: usize,
    pub imitated: bool,
    pub latency_ms: Option<u64>,
    pub repeats_used: u32,
    pub woz_interventions: u32,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogRecord {
    pub at_ms: u64,
    pub before: StateSnapshot,
    pub event: GameEvent,
    pub after: StateSnapshot,
    pub commands: Vec<Command>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub outcome: Option<LineOutcome>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub ignored: Option<IgnoreReason>,
}

/// Append-only history of a session.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SessionLog {
    pub session_id: String,
    pub script_title: String,
    pub records: Vec<LogRecord>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("record {index}: replay produced a different transition")]
    Diverged { index: usize },
    #[error("record {index}: recorded state-before does not match replayed state")]
    BadPrecondition { index: usize },
}

impl SessionLog {
    pub fn new(session_id: &str, script_title: &str) -> Self {
        SessionLog { session_id: session_id.into(), script_title: script_title.into(), records: Vec::new() }
    }

    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    pub fn outcomes(&self) -> impl Iterator<Item = &LineOutcome> {
        self.records.iter().filter_map(|r| r.outcome.as_ref())
    }

    pub fn is_complete(&self) -> bool {
        self.records.last().is_some_and(|r| r.after.phase == Phase::Finished)
    }

    /// Re-runs every recorded event from a fresh state and checks that each
    /// transition matches the record exactly. Returns the final state.
    pub fn replay(&self, script: &RhymeScript) -> Result<GameState, ReplayError> {
        let mut state = GameState::new(self.session_id.as_str());
        for (index, rec) in self.records.iter().enumerate() {
            if state.snapshot() != rec.before {
                return Err(ReplayError::BadPrecondition { index });
            }
            let t = step(&state, &rec.event, rec.at_ms, script);
            if t.record != *rec {
                return Err(ReplayError::Diverged { index });
            }
            state = t.state;
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SessionSummary {
    pub lines_attempted: usize,
    pub imitated_count: usize,
    /// Mean over imitated lines that have a measured latency.
    pub mean_latency_ms: Option<f64>,
    pub repeats_per_line: Vec<u32>,
    pub woz_interventions: u32,
    pub ignored_events: usize,
    pub aborted: bool,
}

pub fn session_summary(log: &SessionLog) -> Result<SessionSummary, GameError> {
    if !log.is_complete() {
        return Err(GameError::IncompleteSession);
    }
    let outcomes: Vec<&LineOutcome> = log.outcomes().collect();
    let latencies: Vec<u64> = outcomes.iter().filter(|o| o.imitated).filter_map(|o| o.latency_ms).collect();
    let mean_latency_ms =
        (!latencies.is_empty()).then(|| latencies.iter().sum::<u64>() as f64 / latencies.len() as f64);
    let woz_interventions =
        log.records.iter().filter(|r| r.ignored.is_none() && matches!(r.event, GameEvent::Woz { .. })).count() as u32;
    Ok(SessionSummary {
        lines_attempted: outcomes.len(),
        imitated_count: outcomes.iter().filter(|o| o.imitated).count(),
        mean_latency_ms,
        repeats_per_line: outcomes.iter().map(|o| o.repeats_used).collect(),
        woz_interventions,
        ignored_events: log.records.iter().filter(|r| r.ignored.is_some()).count(),
        aborted: outcomes.iter().any(|o| o.aborted),
    })
}
