//! Assembles the node graph (camera replay, pose recognition, game master,
//! four peripherals) on a bus and runs it.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use rhyme_mimic_core::game::{session_summary, GameError, PeripheralKind, RhymeScript, SessionLog, SessionSummary};
use rhyme_mimic_core::gmm::GmmClassifier;
use rhyme_mimic_core::ConfidenceThreshold;
use serde::Serialize;

use crate::bus::{Bus, BusDiagnostics, BusError};
use crate::clock::Clock;
use crate::node::{Executor, RunOutcome, StopReason};
use crate::nodes::{
    EngineNode, EngineOptions, EngineOutput, LatencyModel, PeripheralLog, PeripheralNode, PipelineStats, PoseNode,
    ReplayError, ReplayNode, ResourceCatalog,
};
use crate::wire::FrameRecord;

pub struct Replay {
    pub frames: Vec<FrameRecord>,
    pub rate: f64,
    pub looping: bool,
}

pub struct SessionConfig {
    pub script: RhymeScript,
    pub classifier: GmmClassifier,
    pub threshold: ConfidenceThreshold,
    pub latency: LatencyModel,
    pub engine: EngineOptions,
    /// Peripherals fail commands whose resource the script does not name.
    pub strict_resources: bool,
    /// Local camera replay; without it frames must come from elsewhere on
    /// the bus.
    pub replay: Option<Replay>,
    /// Run ends once the clock passes this time.
    pub deadline_ms: Option<u64>,
    /// Keep running after the session finishes, until stopped.
    pub linger: bool,
}

/// Shared views into the running nodes.
#[derive(Clone)]
pub struct SessionHandles {
    pub engine: Arc<Mutex<EngineOutput>>,
    pub pose_stats: Arc<Mutex<PipelineStats>>,
    pub peripherals: Vec<(PeripheralKind, Arc<Mutex<PeripheralLog>>)>,
    pub frames_replayed: Option<Arc<AtomicU64>>,
    pub stop: Arc<AtomicBool>,
}

impl SessionHandles {
    pub fn log(&self) -> SessionLog {
        self.engine.lock().unwrap_or_else(|e| e.into_inner()).log.clone()
    }

    /// Raises the stop flag: the engine aborts an active session and every
    /// executor winds down.
    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("script does not match the model: {0}")]
    Script(#[from] GameError),
}

/// Per-kind counts of commands received and acks sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PeripheralCounts {
    pub kind: PeripheralKind,
    pub commands: usize,
    pub acks: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionResult {
    pub stop_reason: String,
    pub ended_at_ms: u64,
    pub log: SessionLog,
    pub summary: Option<SessionSummary>,
    pub pipeline: PipelineStats,
    pub peripherals: Vec<PeripheralCounts>,
    pub bus: BusDiagnostics,
}

pub struct Session {
    executors: Vec<Executor>,
    engine_executor: usize,
    handles: SessionHandles,
    bus: Bus,
}

impl Session {
    /// Wires the graph onto `bus`. Under a virtual clock every node shares
    /// one deterministic executor; under the real clock each node gets its
    /// own thread.
    pub fn assemble(bus: &Bus, cfg: SessionConfig) -> Result<Self, SessionError> {
        let labels: Vec<&str> = cfg.classifier.labels().collect();
        cfg.script.validate_labels(labels.iter().copied())?;
        let clock = bus.clock().clone();
        let threaded = matches!(clock, Clock::Real(_));
        let stop = Arc::new(AtomicBool::new(false));
        let mut executors: Vec<Executor> = Vec::new();
        let slot = |executors: &mut Vec<Executor>| -> usize {
            if threaded || executors.is_empty() {
                let mut ex = Executor::new(clock.clone());
                ex.set_stop_flag(stop.clone());
                ex.set_deadline_ms(cfg.deadline_ms);
                executors.push(ex);
            }
            executors.len() - 1
        };

        let engine = EngineNode::new(cfg.script.clone(), cfg.engine.clone());
        let engine_out = engine.output();
        let engine_executor = slot(&mut executors);
        let engine_index = executors[engine_executor].add_local(bus, engine)?;
        if !cfg.linger {
            executors[engine_executor].await_node(engine_index);
        }

        let mut peripherals = Vec::new();
        for kind in PeripheralKind::ALL {
            let catalog = if cfg.strict_resources {
                ResourceCatalog::from_script(&cfg.script, kind)
            } else {
                ResourceCatalog::open()
            };
            let node = PeripheralNode::new(kind, catalog, cfg.latency);
            peripherals.push((kind, node.log()));
            let e = slot(&mut executors);
            executors[e].add_local(bus, node)?;
        }

        let pose = PoseNode::new(cfg.classifier, cfg.threshold);
        let pose_stats = pose.stats();
        let e = slot(&mut executors);
        executors[e].add_local(bus, pose)?;

        let frames_replayed = match cfg.replay {
            Some(r) => {
                let node = ReplayNode::new(&r.frames, r.rate, r.looping)?;
                let emitted = node.emitted();
                let e = slot(&mut executors);
                executors[e].add_local(bus, node)?;
                Some(emitted)
            }
            None => None,
        };

        Ok(Session {
            executors,
            engine_executor,
            handles: SessionHandles { engine: engine_out, pose_stats, peripherals, frames_replayed, stop },
            bus: bus.clone(),
        })
    }

    pub fn handles(&self) -> SessionHandles {
        self.handles.clone()
    }

    /// Under the virtual clock, wait for remote publishers when idle
    /// instead of ending the run.
    pub fn set_wait_for_remote(&mut self, wait: bool) {
        for ex in &mut self.executors {
            ex.set_wait_for_remote(wait);
        }
    }

    /// Runs until the session finishes, the deadline passes or the stop
    /// flag is raised.
    pub fn run(self) -> SessionResult {
        let Session { executors, engine_executor, handles, bus } = self;
        let outcome = if executors.len() == 1 {
            executors.into_iter().next().expect("one executor").run()
        } else {
            let mut threads = Vec::new();
            let mut engine_thread = None;
            for (i, mut ex) in executors.into_iter().enumerate() {
                let t = thread::spawn(move || ex.run());
                if i == engine_executor {
                    engine_thread = Some(t);
                } else {
                    threads.push(t);
                }
            }
            let outcome = engine_thread.expect("engine executor").join().expect("engine thread");
            handles.stop();
            for t in threads {
                let _ = t.join();
            }
            outcome
        };
        collect(&bus, &handles, outcome)
    }
}

fn collect(bus: &Bus, handles: &SessionHandles, outcome: RunOutcome) -> SessionResult {
    let log = handles.log();
    let summary = session_summary(&log).ok();
    let peripherals = handles
        .peripherals
        .iter()
        .map(|(kind, l)| {
            let l = l.lock().unwrap_or_else(|e| e.into_inner());
            PeripheralCounts {
                kind: *kind,
                commands: l.received.len(),
                acks: l.acks.len(),
                failed: l.acks.iter().filter(|(_, a)| a.status == crate::nodes::AckStatus::Failed).count(),
            }
        })
        .collect();
    let reason = match outcome.reason {
        StopReason::Done => "finished",
        StopReason::Deadline => "deadline",
        StopReason::Idle => "idle",
        StopReason::Stopped => "stopped",
    };
    SessionResult {
        stop_reason: reason.into(),
        ended_at_ms: outcome.now_ms,
        log,
        summary,
        pipeline: handles.pose_stats.lock().unwrap_or_else(|e| e.into_inner()).clone(),
        peripherals,
        bus: bus.diagnostics(),
    }
}
