//! Command implementations behind the `rhyme-mimic` binary. Each returns
//! its results as values so the binary only parses arguments and prints.

use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use rhyme_mimic_core::game::RhymeScript;
use rhyme_mimic_core::gmm::{self, EvaluationReport, GmmClassifier, GmmError, LabeledDataset, TrainingConfig};
use rhyme_mimic_core::ConfidenceThreshold;
use serde::{Deserialize, Serialize};

use crate::bus::tcp::{serve_tcp, TcpServer};
use crate::bus::ws::{serve_ws, WsOptions, WsServer};
use crate::bus::Bus;
use crate::clock::Clock;
use crate::files::{self, DatasetError, ModelIoError, ScriptError};
use crate::nodes::{classify_record, FrameOutcome, PipelineStats, PoseClassification, ReplayError};
use crate::session::{Replay, Session, SessionConfig, SessionError, SessionHandles, SessionResult};
use crate::synthetic::{self, StreamOptions, StreamTruth, SyntheticError};
use crate::wire::{self, FrameRecord};

pub const TRAIN_REPORT_FORMAT: &str = "rhyme-mimic-train-report";
pub const EVAL_REPORT_FORMAT: &str = "rhyme-mimic-eval-report";
pub const SESSION_FORMAT: &str = "rhyme-mimic-session";
pub const CLASSIFY_SUMMARY_FORMAT: &str = "rhyme-mimic-classify-summary";
pub const REPORT_VERSION: u32 = 1;

/// Within-class standard deviation of the bundled synthetic dataset, in
/// normalized feature units.
pub const DEFAULT_SPREAD: f64 = 1.1;

/// A spread at which the bundled classes never overlap.
pub const SEPARATED_SPREAD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Model { path: PathBuf, source: ModelIoError },
    #[error("{path}: {source}")]
    Dataset { path: PathBuf, source: DatasetError },
    #[error("{path}: {source}")]
    Script { path: PathBuf, source: ScriptError },
    #[error("{path}: {source}")]
    Stream { path: PathBuf, source: ReplayError },
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("{0}")]
    Domain(String),
}

impl AppError {
    /// 1 for failures of the computation itself, 2 for bad invocations and
    /// unreadable or unwritable files.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Gmm(_) | AppError::Synthetic(_) | AppError::Domain(_) => 1,
            AppError::Session(SessionError::Replay(ReplayError::BadRate(_)) | SessionError::Script(_)) => 2,
            AppError::Session(_) => 1,
            AppError::Usage(_)
            | AppError::Io { .. }
            | AppError::Model { .. }
            | AppError::Dataset { .. }
            | AppError::Script { .. }
            | AppError::Stream { .. } => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> AppError + '_ {
    move |source| AppError::Io { path: path.into(), source }
}

pub fn read_model(path: &Path) -> Result<GmmClassifier, AppError> {
    files::load_model(path).map_err(|source| AppError::Model { path: path.into(), source })
}

pub fn read_script(path: &Path) -> Result<RhymeScript, AppError> {
    files::load_script(path).map_err(|source| AppError::Script { path: path.into(), source })
}

pub fn read_frames(path: &Path) -> Result<Vec<FrameRecord>, AppError> {
    crate::nodes::load_stream(path).map_err(|source| AppError::Stream { path: path.into(), source })
}

/// Loads a dataset, returning the line numbers and reasons of skipped rows
/// along with it.
pub fn read_dataset(
    path: &Path,
    config: &TrainingConfig,
    threshold: ConfidenceThreshold,
) -> Result<(LabeledDataset, Vec<(usize, String)>), AppError> {
    let file = files::load_dataset(path, config.reference_indices, threshold)
        .map_err(|source| AppError::Dataset { path: path.into(), source })?;
    Ok((file.dataset, file.skipped))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), AppError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn to_json_pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTrace {
    pub label: String,
    pub samples: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Total log-likelihood after initialization and after every EM step.
    pub log_likelihood: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: TrainingConfig,
    pub skipped_records: usize,
    pub classes: Vec<ClassTrace>,
    pub train_accuracy: f64,
}

impl TrainReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "trained {} classes (seed {}, K={}, {:?} covariance)\n",
            self.classes.len(),
            self.seed,
            self.config.components_per_class,
            self.config.covariance_kind
        );
        for c in &self.classes {
            let first = c.log_likelihood.first().copied().unwrap_or(f64::NAN);
            let last = c.log_likelihood.last().copied().unwrap_or(f64::NAN);
            out.push_str(&format!(
                "  {:<14} n={:<3} iterations={:<3} log-likelihood {:.4} -> {:.4}{}\n",
                c.label,
                c.samples,
                c.iterations,
                first,
                last,
                if c.converged { "" } else { " (not converged)" }
            ));
        }
        out.push_str(&format!("train accuracy {:.2}%\n", 100.0 * self.train_accuracy));
        out
    }
}

/// Fits a classifier and describes the fit.
pub fn train(data: &LabeledDataset, config: &TrainingConfig) -> Result<(GmmClassifier, TrainReport), AppError> {
    let (classifier, traces) = gmm::train_with_traces(data, config)?;
    let counts = data.class_counts();
    let classes = data
        .labels()
        .iter()
        .zip(&traces)
        .zip(&counts)
        .map(|((label, t), &samples)| ClassTrace {
            label: label.clone(),
            samples,
            iterations: t.iterations(),
            converged: t.converged,
            log_likelihood: t.log_likelihood.clone(),
        })
        .collect();
    let train_accuracy = gmm::evaluate(&classifier, data)?.accuracy;
    let report = TrainReport {
        format: TRAIN_REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        seed: config.rng_seed,
        config: config.clone(),
        skipped_records: 0,
        classes,
        train_accuracy,
    };
    Ok((classifier, report))
}

/// `train` on a dataset file, writing the model and, if asked, the report.
pub fn cmd_train(
    dataset: &Path,
    model_out: &Path,
    report_out: Option<&Path>,
    config: &TrainingConfig,
    threshold: ConfidenceThreshold,
) -> Result<TrainReport, AppError> {
    let (data, skipped) = read_dataset(dataset, config, threshold)?;
    let (classifier, mut report) = train(&data, config)?;
    report.skipped_records = skipped.len();
    write_text(model_out, &files::model_to_string(&classifier, Some(config)))?;
    if let Some(p) = report_out {
        write_text(p, &to_json_pretty(&report))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub train_fraction: f64,
    pub seed: u64,
    pub train_samples: usize,
    pub test_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitReport>,
    /// Set when the classifier was trained here on the train split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<EvaluationReport>,
    pub test: EvaluationReport,
    /// Test accuracy, repeated at the top level for scripts.
    pub accuracy: f64,
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match &self.train {
            Some(tr) => out.push_str(&format!(
                "train accuracy {} ({}/{})    test accuracy {} ({}/{})\n",
                pct(tr.accuracy),
                tr.correct,
                tr.total,
                pct(self.test.accuracy),
                self.test.correct,
                self.test.total
            )),
            None => out.push_str(&format!(
                "accuracy {} ({}/{})\n",
                pct(self.test.accuracy),
                self.test.correct,
                self.test.total
            )),
        }
        out.push_str("per-class recall:\n");
        for (label, r) in self.labels.iter().zip(&self.test.per_class_recall) {
            let r = r.map_or_else(|| "-".to_string(), pct);
            out.push_str(&format!("  {label:<14} {r}\n"));
        }
        out.push_str("confusion (rows true, columns predicted, last column rejected):\n");
        let c = &self.test.confusion;
        for (label, row) in c.labels.iter().zip(&c.counts) {
            let cells: Vec<String> = row.iter().map(|n| format!("{n:>3}")).collect();
            out.push_str(&format!("  {label:<14}{}\n", cells.join(" ")));
        }
        out
    }
}

/// How `evaluate_dataset` obtains its classifier and test set.
#[derive(Debug, Clone)]
pub enum EvalMode<'a> {
    /// Score a given classifier on the whole dataset.
    Model(&'a GmmClassifier),
    /// Split, then score a given classifier on both sides.
    ModelSplit(&'a GmmClassifier, f64, u64),
    /// Split, train on the train side with this configuration, score both.
    Fit(&'a TrainingConfig, f64),
}

pub fn evaluate_dataset(data: &LabeledDataset, mode: EvalMode<'_>) -> Result<EvalReport, AppError> {
    let (labels, split, training, train, test) = match mode {
        EvalMode::Model(c) => (c.labels().map(String::from).collect(), None, None, None, gmm::evaluate(c, data)?),
        EvalMode::ModelSplit(c, fraction, seed) => {
            let (tr, te) = gmm::split(data, fraction, seed)?;
            let split = SplitReport { train_fraction: fraction, seed, train_samples: tr.len(), test_samples: te.len() };
            let labels = c.labels().map(String::from).collect();
            (labels, Some(split), None, Some(gmm::evaluate(c, &tr)?), gmm::evaluate(c, &te)?)
        }
        EvalMode::Fit(config, fraction) => {
            let seed = config.rng_seed;
            let (tr, te) = gmm::split(data, fraction, seed)?;
            let c = gmm::train(&tr, config)?;
            let split = SplitReport { train_fraction: fraction, seed, train_samples: tr.len(), test_samples: te.len() };
            let labels = c.labels().map(String::from).collect();
            (labels, Some(split), Some(config.clone()), Some(gmm::evaluate(&c, &tr)?), gmm::evaluate(&c, &te)?)
        }
    };
    Ok(EvalReport {
        format: EVAL_REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        labels,
        split,
        training,
        train,
        accuracy: test.accuracy,
        test,
    })
}

/// Per-frame classifications of a recorded stream plus skip counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedStream {
    pub labels: Vec<PoseClassification>,
    pub stats: PipelineStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifySummary {
    pub format: String,
    pub version: u32,
    #[serde(flatten)]
    pub stats: PipelineStats,
    pub skipped: u64,
}

impl ClassifiedStream {
    pub fn summary(&self) -> ClassifySummary {
        ClassifySummary {
            format: CLASSIFY_SUMMARY_FORMAT.into(),
            version: REPORT_VERSION,
            stats: self.stats.clone(),
            skipped: self.stats.skipped(),
        }
    }

    pub fn write_ndjson(&self, mut w: impl Write) -> io::Result<()> {
        for c in &self.labels {
            serde_json::to_writer(&mut w, c)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

pub fn classify_frames(
    classifier: &GmmClassifier,
    threshold: ConfidenceThreshold,
    frames: &[FrameRecord],
) -> ClassifiedStream {
    let mut stats = PipelineStats::default();
    let mut labels = Vec::new();
    for record in frames {
        let outcome = classify_record(classifier, threshold, record);
        stats.count(&outcome);
        if let FrameOutcome::Classified(c) = outcome {
            labels.push(c);
        }
    }
    ClassifiedStream { labels, stats }
}

/// `gen-synthetic`: writes an 8-class style feature dataset.
pub fn cmd_gen_synthetic(
    out: &Path,
    classes: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset, AppError> {
    let data = synthetic::gen_synthetic(classes, per_class, spread, seed)?;
    let mut buf = Vec::new();
    files::write_dataset(&mut buf, &data).map_err(io_err(out))?;
    write_text(out, std::str::from_utf8(&buf).expect("dataset is UTF-8"))?;
    Ok(data)
}

/// `gen-stream`: writes a session stream for `script` and its ground truth.
pub fn cmd_gen_stream(
    script: &RhymeScript,
    held: &[bool],
    options: &StreamOptions,
    out: &Path,
    truth_out: &Path,
) -> Result<StreamTruth, AppError> {
    let (frames, truth) = synthetic::gen_session_stream(script, held, options)?;
    let mut buf = Vec::new();
    wire::write_stream(&mut buf, &frames).map_err(io_err(out))?;
    write_text(out, std::str::from_utf8(&buf).expect("stream is UTF-8"))?;
    write_text(truth_out, &to_json_pretty(&truth))?;
    Ok(truth)
}

/// Parses a held pattern such as `11011010` or `yes,no,...`.
pub fn parse_held(text: &str) -> Result<Vec<bool>, AppError> {
    let text = text.trim();
    let items: Vec<&str> = if text.contains(',') {
        text.split(',').map(str::trim).collect()
    } else {
        text.split("").filter(|s| !s.is_empty()).collect()
    };
    items
        .into_iter()
        .map(|s| match s {
            "1" | "y" | "yes" | "true" => Ok(true),
            "0" | "n" | "no" | "false" => Ok(false),
            other => Err(AppError::Usage(format!("held pattern entry {other:?} is not 0/1"))),
        })
        .collect()
}

/// Written by `play` and `serve`.
#[derive(Debug, Clone, Serialize)]
pub struct SessionDocument<'a> {
    pub format: &'static str,
    pub version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub result: &'a SessionResult,
}

pub fn session_document(result: &SessionResult, seed: Option<u64>) -> String {
    to_json_pretty(&SessionDocument { format: SESSION_FORMAT, version: REPORT_VERSION, seed, result })
}

/// Runs a session to completion under `bus`'s clock. With a stream, frames
/// come from the local replay; otherwise the caller must have attached a
/// transport over which a camera publishes.
pub fn play(
    bus: &Bus,
    config: SessionConfig,
    on_ready: impl FnOnce(SessionHandles),
) -> Result<SessionResult, AppError> {
    let wait = config.replay.is_none();
    let mut session = Session::assemble(bus, config)?;
    if wait {
        session.set_wait_for_remote(true);
    }
    on_ready(session.handles());
    Ok(session.run())
}

/// A running `serve`: bus, TCP listener, websocket bridge and the node graph.
pub struct Server {
    pub bus: Bus,
    pub tcp: TcpServer,
    pub ws: Option<WsServer>,
    handles: SessionHandles,
    runner: std::thread::JoinHandle<SessionResult>,
}

impl Server {
    pub fn start(
        clock: Clock,
        bus_addr: SocketAddr,
        ws_addr: Option<SocketAddr>,
        ws_options: WsOptions,
        config: SessionConfig,
    ) -> Result<Self, AppError> {
        let bus = Bus::new(clock);
        let tcp = serve_tcp(&bus, bus_addr).map_err(|e| AppError::Domain(format!("bus listener {bus_addr}: {e}")))?;
        let ws = match ws_addr {
            Some(a) => Some(
                serve_ws(&bus, a, ws_options).map_err(|e| AppError::Domain(format!("websocket bridge {a}: {e}")))?,
            ),
            None => None,
        };
        let mut session = Session::assemble(&bus, config)?;
        session.set_wait_for_remote(true);
        let handles = session.handles();
        let runner = std::thread::spawn(move || session.run());
        Ok(Server { bus, tcp, ws, handles, runner })
    }

    pub fn handles(&self) -> &SessionHandles {
        &self.handles
    }

    /// Blocks until the graph stops.
    pub fn wait(self) -> SessionResult {
        let result = self.runner.join().expect("session thread");
        self.tcp.shutdown();
        self.bus.close();
        result
    }

    /// Raises the stop flag and waits.
    pub fn shutdown(self) -> SessionResult {
        self.handles.stop();
        self.wait()
    }
}

/// Builds the replay part of a session config from a stream file.
pub fn replay_from(path: &Path, rate: f64, looping: bool) -> Result<Replay, AppError> {
    Ok(Replay { frames: read_frames(path)?, rate, looping })
}
