//! Camera stand-in: replays a recorded keypoint stream onto `pose/frames`.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde_json::Value;

use crate::bus::{topics, BusMessage};
use crate::node::{Context, Node};
use crate::wire::{self, FrameRecord, StreamError, DEFAULT_FRAME_INTERVAL_MS};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySource {
    pub path: PathBuf,
    /// Playback speed; 1.0 is real time, 0 emits frames back-to-back.
    pub rate: f64,
    pub looping: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("malformed stream {path}: {source}")]
    MalformedStream { path: PathBuf, source: StreamError },
    #[error("cannot open stream {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("playback rate must be finite and non-negative, got {0}")]
    BadRate(f64),
}

pub fn load_stream(path: &Path) -> Result<Vec<FrameRecord>, ReplayError> {
    let f = File::open(path).map_err(|source| ReplayError::Io { path: path.into(), source })?;
    wire::read_stream(BufReader::new(f)).map_err(|source| ReplayError::MalformedStream { path: path.into(), source })
}

const NEXT_FRAME: u64 = 1;

pub struct ReplayNode {
    frames: Vec<(u64, Value)>,
    rate: f64,
    looping: bool,
    next: usize,
    /// Recorded-time offset added on each pass of a looping stream.
    pass_offset: u64,
    started_at: u64,
    emitted: Arc<AtomicU64>,
}

impl ReplayNode {
    pub fn new(records: &[FrameRecord], rate: f64, looping: bool) -> Result<Self, ReplayError> {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(ReplayError::BadRate(rate));
        }
        let frames =
            records.iter().map(|r| (r.timestamp_ms, wire::to_value(&r.people, Some(r.timestamp_ms)))).collect();
        Ok(ReplayNode { frames, rate, looping, next: 0, pass_offset: 0, started_at: 0, emitted: Arc::default() })
    }

    pub fn from_source(source: &ReplaySource) -> Result<Self, ReplayError> {
        Self::new(&load_stream(&source.path)?, source.rate, source.looping)
    }

    /// Count of frames published so far.
    pub fn emitted(&self) -> Arc<AtomicU64> {
        self.emitted.clone()
    }

    fn first_ts(&self) -> u64 {
        self.frames.first().map_or(0, |f| f.0)
    }

    /// Recorded span of one pass plus one mean frame interval.
    fn pass_length(&self) -> u64 {
        let last = self.frames.last().map_or(0, |f| f.0);
        let span = last - self.first_ts();
        let interval = match self.frames.len() {
            0 | 1 => DEFAULT_FRAME_INTERVAL_MS,
            n => (span as f64 / (n - 1) as f64).round().max(1.0) as u64,
        };
        span + interval
    }

    fn schedule(&self, ctx: &mut Context<'_>) {
        let Some((ts, _)) = self.frames.get(self.next) else { return };
        if self.rate == 0.0 {
            ctx.set_timer(NEXT_FRAME, ctx.now_ms());
            return;
        }
        let recorded = ts - self.first_ts() + self.pass_offset;
        let at = self.started_at + (recorded as f64 / self.rate).round() as u64;
        ctx.set_timer(NEXT_FRAME, at.max(ctx.now_ms()));
    }
}

impl Node for ReplayNode {
    fn name(&self) -> &str {
        "camera-replay"
    }

    fn subscriptions(&self) -> Vec<String> {
        vec![]
    }

    fn on_start(&mut self, ctx: &mut Context<'_>) {
        self.started_at = ctx.now_ms();
        self.schedule(ctx);
    }

    fn on_message(&mut self, _: &BusMessage, _: &mut Context<'_>) {}

    fn on_timer(&mut self, token: u64, ctx: &mut Context<'_>) {
        if token != NEXT_FRAME {
            return;
        }
        let Some((ts, doc)) = self.frames.get(self.next) else { return };
        let mut doc = doc.clone();
        if self.pass_offset > 0 {
            doc["timestamp_ms"] = Value::from(ts + self.pass_offset);
        }
        ctx.publish(topics::POSE_FRAMES, doc);
        self.emitted.fetch_add(1, Ordering::Relaxed);
        self.next += 1;
        if self.next == self.frames.len() && self.looping {
            self.next = 0;
            self.pass_offset += self.pass_length();
        }
        self.schedule(ctx);
    }

    fn is_done(&self) -> bool {
        !self.looping && self.next >= self.frames.len()
    }
}
