//! Time sources. Every timeout, ack latency and replay delay reads one of
//! these, so a whole session can run under simulated time.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

/// Simulated time, advanced explicitly by the executor driving it.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock(Arc<AtomicU64>);

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    /// Moves time forward to `ms`; never moves it back.
    pub fn advance_to(&self, ms: u64) {
        self.0.fetch_max(ms, Ordering::SeqCst);
    }
}

/// Milliseconds elapsed since construction.
#[derive(Debug, Clone)]
pub struct RealClock {
    origin: Instant,
}

impl RealClock {
    pub fn new() -> Self {
        RealClock { origin: Instant::now() }
    }

    pub fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Real,
    Virtual,
}

#[derive(Debug, Clone)]
pub enum Clock {
    Real(RealClock),
    Virtual(VirtualClock),
}

impl Clock {
    pub fn new(mode: ClockMode) -> Self {
        match mode {
            ClockMode::Real => Clock::Real(RealClock::new()),
            ClockMode::Virtual => Clock::Virtual(VirtualClock::new()),
        }
    }

    pub fn now_ms(&self) -> u64 {
        match self {
            Clock::Real(c) => c.now_ms(),
            Clock::Virtual(c) => c.now_ms(),
        }
    }

    pub fn mode(&self) -> ClockMode {
        match self {
            Clock::Real(_) => ClockMode::Real,
            Clock::Virtual(_) => ClockMode::Virtual,
        }
    }
}
