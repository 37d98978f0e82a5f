//! Nursery-rhyme imitation game.
//!
//! For every line of the rhyme the robot sings (audio + gesture + image), then
//! waits for the child to hold the line's pose. A held pose is encouraged and
//! the game moves on; a timeout re-sings the line until the repeat budget is
//! spent, after which the game advances anyway. An operator can override the
//! flow at any time with [`WozCommand`]s.
//!
//! [`step`] is a pure transition function. It returns the follow-up
//! [`Command`]s (peripheral requests and timer directives) and a
//! [`LogRecord`]; the caller owns timers and peripheral acknowledgements and
//! feeds the results back as [`GameEvent`]s.

mod log;

use alloc::string::String;
use alloc::vec::Vec;

pub use log::{session_summary, LineOutcome, LogRecord, ReplayError, SessionLog, SessionSummary, StateSnapshot};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GameError {
    #[error("a session is already active")]
    SessionActive,
    #[error("the session has already finished")]
    SessionFinished,
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("session log is incomplete")]
    IncompleteSession,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RhymeLine {
    pub index: usize,
    pub lyric_text: String,
    pub pose_class: String,
    pub audio_ref: String,
    pub image_ref: String,
    /// Motion resource; the pose class name when absent.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub gesture_ref: Option<String>,
    pub sing_duration_ms: u64,
    #[cfg_attr(feature = "serde", serde(default = "default_wait_timeout"))]
    pub wait_timeout_ms: u64,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub gesture_duration_ms: Option<u64>,
    pub encourage_text: String,
}

impl RhymeLine {
    pub fn gesture(&self) -> &str {
        self.gesture_ref.as_deref().unwrap_or(&self.pose_class)
    }
}

#[cfg(feature = "serde")]
fn default_wait_timeout() -> u64 {
    10_000
}

#[cfg(feature = "serde")]
fn default_repeat_limit() -> u32 {
    1
}

#[cfg(feature = "serde")]
fn default_match_streak() -> u32 {
    5
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RhymeScript {
    pub title: String,
    pub lines: Vec<RhymeLine>,
    #[cfg_attr(feature = "serde", serde(default = "default_repeat_limit"))]
    pub repeat_limit: u32,
    #[cfg_attr(feature = "serde", serde(default = "default_match_streak"))]
    pub match_streak: u32,
    /// Whether the robot may move its base; forwarded to the motion peripheral.
    #[cfg_attr(feature = "serde", serde(default))]
    pub mobile: bool,
}

impl RhymeScript {
    pub fn new(title: impl Into<String>, lines: Vec<RhymeLine>) -> Self {
        RhymeScript { title: title.into(), lines, repeat_limit: 1, match_streak: 5, mobile: false }
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if self.match_streak == 0 {
            return Err(GameError::InvalidScript("match_streak must be at least 1".into()));
        }
        for (i, line) in self.lines.iter().enumerate() {
            if line.index != i {
                return Err(GameError::InvalidScript(alloc::format!("line {i} has index {}", line.index)));
            }
            if line.sing_duration_ms == 0 || line.wait_timeout_ms == 0 || line.gesture_duration_ms == Some(0) {
                return Err(GameError::InvalidScript(alloc::format!("line {i} has a zero duration")));
            }
        }
        Ok(())
    }

    /// Checks that every line's pose class is one of `labels`.
    pub fn validate_labels<'a>(&self, labels: impl IntoIterator<Item = &'a str> + Clone) -> Result<(), GameError> {
        for line in &self.lines {
            if !labels.clone().into_iter().any(|l| l == line.pose_class) {
                return Err(GameError::InvalidScript(alloc::format!(
                    "line {} targets unknown pose class {:?}",
                    line.index,
                    line.pose_class
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "phase"))]
pub enum Phase {
    Idle,
    Singing { line: usize, repeats_used: u32 },
    WaitingForImitation { line: usize, repeats_used: u32, streak: u32 },
    Encouraging { line: usize },
    Finished,
}

impl Phase {
    pub fn line(&self) -> Option<usize> {
        match *self {
            Phase::Singing { line, .. } | Phase::WaitingForImitation { line, .. } | Phase::Encouraging { line } => {
                Some(line)
            }
            Phase::Idle | Phase::Finished => None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.line().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum WozCommand {
    RepeatLine,
    NextLine,
    MarkSuccess,
    Pause,
    Resume,
    Abort,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "event"))]
pub enum GameEvent {
    Start,
    SingingDone { line: usize },
    PoseObserved { label: String, score: f64, timestamp_ms: u64 },
    Timeout { line: usize },
    EncourageDone { line: usize },
    Woz { command: WozCommand },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PeripheralKind {
    Display,
    Audio,
    Tts,
    Motion,
}

impl PeripheralKind {
    pub const ALL: [PeripheralKind; 4] =
        [PeripheralKind::Display, PeripheralKind::Audio, PeripheralKind::Tts, PeripheralKind::Motion];

    pub fn name(self) -> &'static str {
        match self {
            PeripheralKind::Display => "display",
            PeripheralKind::Audio => "audio",
            PeripheralKind::Tts => "tts",
            PeripheralKind::Motion => "motion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Resource {
    Ref(String),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PeripheralCommand {
    pub command_id: u64,
    pub kind: PeripheralKind,
    pub resource: Resource,
    pub line: usize,
    /// Expected execution time when the script knows it (audio, gestures).
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub duration_hint_ms: Option<u64>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "core::ops::Not::not"))]
    pub mobile: bool,
}

/// Effects requested by a transition.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "command"))]
pub enum Command {
    Peripheral(PeripheralCommand),
    /// Start the imitation timeout for `line`, replacing any armed one.
    ArmTimeout {
        line: usize,
        duration_ms: u64,
    },
    DisarmTimeout,
    FreezeTimers,
    ThawTimers,
}

/// Progress on the line currently being played.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LineProgress {
    pub imitated: bool,
    pub first_wait_ms: Option<u64>,
    pub latency_ms: Option<u64>,
    pub repeats_used: u32,
    pub woz_interventions: u32,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GameState {
    pub phase: Phase,
    pub paused: bool,
    pub session_id: String,
    pub started_at_ms: Option<u64>,
    pub next_command_id: u64,
    pub progress: LineProgress,
}

impl GameState {
    pub fn new(session_id: impl Into<String>) -> Self {
        GameState {
            phase: Phase::Idle,
            paused: false,
            session_id: session_id.into(),
            started_at_ms: None,
            next_command_id: 1,
            progress: LineProgress::default(),
        }
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot { phase: self.phase, paused: self.paused }
    }

    fn peripheral(
        &mut self,
        kind: PeripheralKind,
        resource: Resource,
        line: usize,
        hint: Option<u64>,
        mobile: bool,
    ) -> Command {
        let command_id = self.next_command_id;
        self.next_command_id += 1;
        Command::Peripheral(PeripheralCommand { command_id, kind, resource, line, duration_hint_ms: hint, mobile })
    }
}

/// Result of one [`step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: GameState,
    pub commands: Vec<Command>,
    pub record: LogRecord,
}

/// Why an event left the state untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum IgnoreReason {
    NotApplicable,
    Paused,
    StaleLine,
    SessionInactive,
}

/// Starts a session from a fresh [`GameState`].
pub fn start_session(state: &GameState, script: &RhymeScript, at_ms: u64) -> Result<Transition, GameError> {
    match state.phase {
        Phase::Idle => {}
        Phase::Finished => return Err(GameError::SessionFinished),
        _ => return Err(GameError::SessionActive),
    }
    script.validate()?;
    Ok(step(state, &GameEvent::Start, at_ms, script))
}

struct Ctx<'a> {
    script: &'a RhymeScript,
    at_ms: u64,
    state: GameState,
    commands: Vec<Command>,
    outcome: Option<LineOutcome>,
}

impl Ctx<'_> {
    fn sing(&mut self, line: usize, repeats_used: u32) {
        let l = &self.script.lines[line];
        self.state.phase = Phase::Singing { line, repeats_used };
        let cmds = [
            self.state.peripheral(PeripheralKind::Display, Resource::Ref(l.image_ref.clone()), line, None, false),
            self.state.peripheral(
                PeripheralKind::Audio,
                Resource::Ref(l.audio_ref.clone()),
                line,
                Some(l.sing_duration_ms),
                false,
            ),
            self.state.peripheral(
                PeripheralKind::Motion,
                Resource::Ref(l.gesture().into()),
                line,
                l.gesture_duration_ms,
                self.script.mobile,
            ),
        ];
        self.commands.extend(cmds);
    }

    fn encourage(&mut self, line: usize) {
        let l = &self.script.lines[line];
        if !self.state.progress.imitated {
            self.state.progress.imitated = true;
            self.state.progress.latency_ms = self.state.progress.first_wait_ms.map(|t| self.at_ms.saturating_sub(t));
        }
        self.state.phase = Phase::Encouraging { line };
        let tts =
            self.state.peripheral(PeripheralKind::Tts, Resource::Text(l.encourage_text.clone()), line, None, false);
        let display =
            self.state.peripheral(PeripheralKind::Display, Resource::Ref(l.image_ref.clone()), line, None, false);
        self.commands.push(tts);
        self.commands.push(display);
    }

    fn close_line(&mut self, line: usize, aborted: bool) {
        let p = self.state.progress;
        self.outcome = Some(LineOutcome {
            line,
            imitated: p.imitated,
            latency_ms: p.latency_ms,
            repeats_used: p.repeats_used,
            woz_interventions: p.woz_interventions,
            aborted,
        });
        self.state.progress = LineProgress::default();
    }

    fn advance(&mut self, line: usize) {
        self.close_line(line, false);
        if line + 1 < self.script.lines.len() {
            self.sing(line + 1, 0);
        } else {
            self.state.phase = Phase::Finished;
        }
    }

    fn leave_waiting(&mut self, from: Phase) {
        if matches!(from, Phase::WaitingForImitation { .. }) {
            self.commands.push(Command::DisarmTimeout);
        }
    }
}

/// Applies one event. Events that are not legal in the current phase leave
/// the state unchanged and are reported through [`LogRecord::ignored`].
pub fn step(state: &GameState, event: &GameEvent, at_ms: u64, script: &RhymeScript) -> Transition {
    let before = state.snapshot();
    let mut cx = Ctx { script, at_ms, state: state.clone(), commands: Vec::new(), outcome: None };
    let ignored = apply(&mut cx, event).err();
    if ignored.is_some() {
        cx.state = state.clone();
        cx.commands.clear();
        cx.outcome = None;
    }
    let record = LogRecord {
        at_ms,
        before,
        event: event.clone(),
        after: cx.state.snapshot(),
        commands: cx.commands.clone(),
        outcome: cx.outcome,
        ignored,
    };
    Transition { state: cx.state, commands: cx.commands, record }
}

fn apply(cx: &mut Ctx<'_>, event: &GameEvent) -> Result<(), IgnoreReason> {
    let phase = cx.state.phase;
    match (event, phase) {
        (GameEvent::Start, Phase::Idle) => {
            cx.state.started_at_ms = Some(cx.at_ms);
            if cx.script.lines.is_empty() {
                cx.state.phase = Phase::Finished;
            } else {
                cx.sing(0, 0);
            }
            Ok(())
        }
        (GameEvent::Start, _) => Err(IgnoreReason::NotApplicable),

        (GameEvent::Woz { command }, _) => apply_woz(cx, *command),
        (_, Phase::Idle | Phase::Finished) => Err(IgnoreReason::SessionInactive),

        (GameEvent::SingingDone { line }, Phase::Singing { line: current, repeats_used }) => {
            if *line != current {
                return Err(IgnoreReason::StaleLine);
            }
            cx.state.phase = Phase::WaitingForImitation { line: current, repeats_used, streak: 0 };
            cx.state.progress.first_wait_ms.get_or_insert(cx.at_ms);
            cx.commands
                .push(Command::ArmTimeout { line: current, duration_ms: cx.script.lines[current].wait_timeout_ms });
            Ok(())
        }
        (GameEvent::PoseObserved { label, .. }, Phase::WaitingForImitation { line, repeats_used, streak }) => {
            if cx.state.paused {
                return Err(IgnoreReason::Paused);
            }
            if *label == cx.script.lines[line].pose_class {
                let streak = streak + 1;
                if streak >= cx.script.match_streak {
                    cx.commands.push(Command::DisarmTimeout);
                    cx.encourage(line);
                } else {
                    cx.state.phase = Phase::WaitingForImitation { line, repeats_used, streak };
                }
            } else {
                cx.state.phase = Phase::WaitingForImitation { line, repeats_used, streak: 0 };
            }
            Ok(())
        }
        (GameEvent::Timeout { line }, Phase::WaitingForImitation { line: current, repeats_used, .. }) => {
            if *line != current {
                return Err(IgnoreReason::StaleLine);
            }
            if cx.state.paused {
                return Err(IgnoreReason::Paused);
            }
            cx.commands.push(Command::DisarmTimeout);
            if repeats_used < cx.script.repeat_limit {
                cx.state.progress.repeats_used = repeats_used + 1;
                cx.sing(current, repeats_used + 1);
            } else {
                cx.advance(current);
            }
            Ok(())
        }
        (GameEvent::EncourageDone { line }, Phase::Encouraging { line: current }) => {
            if *line != current {
                return Err(IgnoreReason::StaleLine);
            }
            cx.advance(current);
            Ok(())
        }
        _ => Err(IgnoreReason::NotApplicable),
    }
}

fn apply_woz(cx: &mut Ctx<'_>, command: WozCommand) -> Result<(), IgnoreReason> {
    let phase = cx.state.phase;
    let Some(line) = phase.line() else {
        return Err(IgnoreReason::SessionInactive);
    };
    match command {
        WozCommand::RepeatLine => {
            let repeats_used = match phase {
                Phase::Singing { repeats_used, .. } | Phase::WaitingForImitation { repeats_used, .. } => repeats_used,
                _ => cx.state.progress.repeats_used,
            };
            cx.leave_waiting(phase);
            cx.sing(line, repeats_used);
        }
        WozCommand::NextLine => {
            cx.leave_waiting(phase);
            cx.state.progress.woz_interventions += 1;
            cx.advance(line);
            return Ok(());
        }
        WozCommand::MarkSuccess => {
            if matches!(phase, Phase::Encouraging { .. }) {
                return Err(IgnoreReason::NotApplicable);
            }
            cx.leave_waiting(phase);
            cx.encourage(line);
        }
        WozCommand::Pause => {
            if cx.state.paused {
                return Err(IgnoreReason::NotApplicable);
            }
            cx.state.paused = true;
            cx.commands.push(Command::FreezeTimers);
        }
        WozCommand::Resume => {
            if !cx.state.paused {
                return Err(IgnoreReason::NotApplicable);
            }
            cx.state.paused = false;
            cx.commands.push(Command::ThawTimers);
        }
        WozCommand::Abort => {
            cx.leave_waiting(phase);
            cx.state.progress.woz_interventions += 1;
            cx.close_line(line, true);
            cx.state.phase = Phase::Finished;
            cx.state.paused = false;
            return Ok(());
        }
    }
    cx.state.progress.woz_interventions += 1;
    Ok(())
}

/// Runs `events` from a fresh state, collecting every transition.
pub fn run_events(session_id: &str, script: &RhymeScript, events: &[(u64, GameEvent)]) -> (GameState, SessionLog) {
    let mut state = GameState::new(session_id);
    let mut log = SessionLog::new(session_id, &script.title);
    for (at, ev) in events {
        let t = step(&state, ev, *at, script);
        log.push(t.record);
        state = t.state;
    }
    (state, log)
}

/// Builds a one-line-per-pose script with uniform timings; handy for tests
/// and fixtures.
pub fn uniform_script(title: &str, poses: &[&str], sing_ms: u64, wait_ms: u64) -> RhymeScript {
    let lines = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| RhymeLine {
            index: i,
            lyric_text: alloc::format!("line {i}"),
            pose_class: String::from(*pose),
            audio_ref: alloc::format!("line{i}.wav"),
            image_ref: alloc::format!("line{i}.png"),
            gesture_ref: None,
            sing_duration_ms: sing_ms,
            wait_timeout_ms: wait_ms,
            gesture_duration_ms: None,
            encourage_text: String::from("Well done!"),
        })
        .collect();
    RhymeScript::new(title, lines)
}

#[cfg(test)]
mod tests;
