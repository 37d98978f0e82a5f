use std::io::{self, Write};
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rhyme_mimic::app::{self, AppError, EvalMode};
use rhyme_mimic::bus::tcp::serve_tcp;
use rhyme_mimic::bus::ws::WsOptions;
use rhyme_mimic::bus::Bus;
use rhyme_mimic::clock::{Clock, ClockMode};
use rhyme_mimic::config::{RunConfig, DEFAULT_BUS_ADDR, DEFAULT_WS_ADDR};
use rhyme_mimic::files;
use rhyme_mimic::nodes::EngineOptions;
use rhyme_mimic::session::{SessionConfig, SessionHandles};
use rhyme_mimic::synthetic::{self, StreamOptions};
use rhyme_mimic_core::gmm::{CovarianceKind, TrainingConfig};
use rhyme_mimic_core::ConfidenceThreshold;

#[derive(Parser)]
#[command(
    name = "rhyme-mimic",
    version,
    about = "Pose-imitation nursery rhyme game: training, evaluation and robot simulation"
)]
struct Cli {
    /// TOML run configuration; defaults to $RHYME_MIMIC_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a pose classifier on a dataset file.
    Train(TrainArgs),
    /// Report accuracy, per-class recall and the confusion matrix.
    Eval(EvalArgs),
    /// Label every frame of a keypoint stream.
    Classify(ClassifyArgs),
    /// Write a synthetic pose dataset.
    GenSynthetic(GenSyntheticArgs),
    /// Write a synthetic session stream and its ground truth.
    GenStream(GenStreamArgs),
    /// Write the bundled rhyme script.
    GenScript(GenScriptArgs),
    /// Run one game session and write its log.
    Play(PlayArgs),
    /// Host the bus, the node graph and the console bridge.
    Serve(ServeArgs),
}

#[derive(Args)]
struct Fitting {
    #[arg(long)]
    seed: Option<u64>,
    /// Mixture components per class.
    #[arg(long)]
    components: Option<usize>,
    #[arg(long, value_enum)]
    covariance: Option<CovArg>,
    /// Joint confidence threshold for raw-joint dataset rows.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CovArg {
    Diag,
    Full,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Where to write the model.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Where to write the JSON training report.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    fit: Fitting,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Classifier to score; without it one is trained on the train split.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Fraction of every class used for training.
    #[arg(long)]
    split: Option<f64>,
    /// Where to write the JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Print the JSON report instead of text.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    fit: Fitting,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    stream: Option<PathBuf>,
    /// Label stream destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct GenSyntheticArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 30)]
    per_class: usize,
    #[arg(long, default_value_t = app::DEFAULT_SPREAD)]
    spread: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenStreamArgs {
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth destination.
    #[arg(long)]
    truth: PathBuf,
    /// Script to act out; the bundled one when absent.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Which lines the child imitates, e.g. 11011010.
    #[arg(long)]
    held: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenScriptArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Graph {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    script: Option<PathBuf>,
    /// Recorded keypoint stream replayed as the camera.
    #[arg(long)]
    stream: Option<PathBuf>,
    #[arg(long, value_enum)]
    clock: Option<ClockMode>,
    /// Replay speed; 0 replays as fast as possible.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    bus_addr: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Session log destination.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail commands naming media the script does not reference.
    #[arg(long)]
    strict_resources: bool,
}

#[derive(Args)]
struct PlayArgs {
    #[command(flatten)]
    graph: Graph,
    /// Stop after this much session time.
    #[arg(long)]
    deadline_ms: Option<u64>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    graph: Graph,
    #[arg(long)]
    ws_addr: Option<String>,
    /// No websocket bridge.
    #[arg(long)]
    no_ws: bool,
    /// Wait for a Start on game/events instead of starting at once.
    #[arg(long)]
    manual_start: bool,
    /// Exit when the session finishes instead of waiting for a signal.
    #[arg(long)]
    once: bool,
    /// Replay the stream forever.
    #[arg(long = "loop")]
    looping: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rhyme-mimic: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    let config = RunConfig::discover(cli.config.as_deref()).map_err(|e| AppError::Usage(e.to_string()))?;
    match cli.command {
        Cmd::Train(a) => train(a, &config),
        Cmd::Eval(a) => eval(a, &config),
        Cmd::Classify(a) => classify(a, &config),
        Cmd::GenSynthetic(a) => {
            let seed = a.seed.or(config.seed).unwrap_or(0);
            let data = app::cmd_gen_synthetic(&a.out, a.classes, a.per_class, a.spread, seed)?;
            eprintln!("wrote {} samples to {} (seed {seed}, spread {})", data.len(), a.out.display(), a.spread);
            Ok(())
        }
        Cmd::GenStream(a) => {
            let script = match a.script.as_deref().or(config.script.as_deref()) {
                Some(p) => app::read_script(p)?,
                None => synthetic::demo_script(),
            };
            let held = match &a.held {
                Some(h) => app::parse_held(h)?,
                None => (0..script.lines.len()).map(|i| i % 3 != 2).collect(),
            };
            let options = StreamOptions {
                seed: a.seed.or(config.seed).unwrap_or(0),
                latency: config.latency,
                ..Default::default()
            };
            let truth = app::cmd_gen_stream(&script, &held, &options, &a.out, &a.truth)?;
            eprintln!(
                "wrote {} ms of frames to {} (seed {})",
                truth.expected_end_ms + 1000,
                a.out.display(),
                truth.seed
            );
            Ok(())
        }
        Cmd::GenScript(a) => app::write_text(&a.out, &files::script_to_string(&synthetic::demo_script())),
        Cmd::Play(a) => play(a, &config),
        Cmd::Serve(a) => serve(a, &config),
    }
}

fn required<'a>(flag: Option<&'a Path>, config: Option<&'a Path>, name: &str) -> Result<&'a Path, AppError> {
    flag.or(config).ok_or_else(|| AppError::Usage(format!("--{name} is required")))
}

fn threshold(flag: Option<f64>, config: &RunConfig) -> Result<ConfidenceThreshold, AppError> {
    match flag.or(config.threshold) {
        Some(c) => {
            ConfidenceThreshold::new(c).ok_or_else(|| AppError::Usage(format!("threshold {c} is outside [0, 1]")))
        }
        None => Ok(ConfidenceThreshold::DEFAULT),
    }
}

fn training(fit: &Fitting, config: &RunConfig) -> TrainingConfig {
    let mut t = TrainingConfig { rng_seed: fit.seed.or(config.seed).unwrap_or(0), ..Default::default() };
    if let Some(k) = fit.components.or(config.components) {
        t.components_per_class = k;
    }
    let kind = fit.covariance.map(|c| match c {
        CovArg::Diag => CovarianceKind::Diagonal,
        CovArg::Full => CovarianceKind::Full,
    });
    if let Some(kind) = kind.or(config.covariance) {
        t.covariance_kind = kind;
    }
    t
}

fn train(a: TrainArgs, config: &RunConfig) -> Result<(), AppError> {
    let dataset = required(a.dataset.as_deref(), config.dataset.as_deref(), "dataset")?;
    let model = required(a.model.as_deref(), config.model.as_deref(), "model")?;
    let t = training(&a.fit, config);
    let report = app::cmd_train(dataset, model, a.report.as_deref(), &t, threshold(a.fit.threshold, config)?)?;
    print!("{}", report.to_text());
    Ok(())
}

fn eval(a: EvalArgs, config: &RunConfig) -> Result<(), AppError> {
    let dataset = required(a.dataset.as_deref(), config.dataset.as_deref(), "dataset")?;
    let t = training(&a.fit, config);
    let split = a.split.or(config.split);
    let (data, _) = app::read_dataset(dataset, &t, threshold(a.fit.threshold, config)?)?;
    let model = match a.model.as_deref().or(config.model.as_deref()) {
        Some(p) => Some(app::read_model(p)?),
        None => None,
    };
    let mode = match (&model, split) {
        (Some(m), None) => EvalMode::Model(m),
        (Some(m), Some(f)) => EvalMode::ModelSplit(m, f, t.rng_seed),
        (None, f) => EvalMode::Fit(&t, f.unwrap_or(2.0 / 3.0)),
    };
    let report = app::evaluate_dataset(&data, mode)?;
    if let Some(p) = &a.report {
        app::write_text(p, &app::to_json_pretty(&report))?;
    }
    if a.json {
        print!("{}", app::to_json_pretty(&report));
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn classify(a: ClassifyArgs, config: &RunConfig) -> Result<(), AppError> {
    let model = app::read_model(required(a.model.as_deref(), config.model.as_deref(), "model")?)?;
    let frames = app::read_frames(required(a.stream.as_deref(), config.stream.as_deref(), "stream")?)?;
    let out = app::classify_frames(&model, threshold(a.threshold, config)?, &frames);
    match &a.out {
        Some(p) => {
            let mut buf = Vec::new();
            out.write_ndjson(&mut buf).expect("in-memory write");
            app::write_text(p, std::str::from_utf8(&buf).expect("UTF-8"))?;
        }
        None => {
            out.write_ndjson(io::stdout().lock()).map_err(|source| AppError::Io { path: "<stdout>".into(), source })?
        }
    }
    eprintln!("{}", serde_json::to_string(&out.summary()).expect("summary serializes"));
    Ok(())
}

fn resolve_addr(text: &str) -> Result<SocketAddr, AppError> {
    text.to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .ok_or_else(|| AppError::Usage(format!("cannot resolve address {text:?}")))
}

/// Loads everything a node graph needs. The clock defaults to virtual when
/// a recorded stream drives the session and to real otherwise.
fn session_config(g: &Graph, config: &RunConfig, looping: bool) -> Result<(SessionConfig, ClockMode), AppError> {
    let classifier = app::read_model(required(g.model.as_deref(), config.model.as_deref(), "model")?)?;
    let script = app::read_script(required(g.script.as_deref(), config.script.as_deref(), "script")?)?;
    let stream = g.stream.as_deref().or(config.stream.as_deref());
    let rate = g.rate.or(config.rate).unwrap_or(1.0);
    let replay = match stream {
        Some(p) => Some(app::replay_from(p, rate, looping)?),
        None => None,
    };
    let default_clock = if replay.is_some() { ClockMode::Virtual } else { ClockMode::Real };
    let clock = g.clock.or(config.clock).unwrap_or(default_clock);
    let mut engine = EngineOptions::default();
    if let Some(ms) = config.state_interval_ms {
        engine.state_interval_ms = Some(ms);
    }
    let cfg = SessionConfig {
        script,
        classifier,
        threshold: threshold(g.threshold, config)?,
        latency: config.latency,
        engine,
        strict_resources: g.strict_resources,
        replay,
        deadline_ms: None,
        linger: false,
    };
    Ok((cfg, clock))
}

fn on_interrupt(handles: &SessionHandles) {
    let h = handles.clone();
    if let Err(e) = ctrlc::set_handler(move || h.stop()) {
        log::warn!("cannot install signal handler: {e}");
    }
}

fn write_log(
    out: Option<&Path>,
    result: &rhyme_mimic::session::SessionResult,
    seed: Option<u64>,
) -> Result<(), AppError> {
    let doc = app::session_document(result, seed);
    match out {
        Some(p) => app::write_text(p, &doc),
        None => Ok(()),
    }
}

fn print_summary(result: &rhyme_mimic::session::SessionResult) {
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "session {} at {} ms", result.stop_reason, result.ended_at_ms);
    match &result.summary {
        Some(s) => {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(s).expect("summary serializes"));
        }
        None => {
            let _ = writeln!(out, "session incomplete");
        }
    }
}

fn play(a: PlayArgs, config: &RunConfig) -> Result<(), AppError> {
    let (mut cfg, clock) = session_config(&a.graph, config, false)?;
    cfg.deadline_ms = a.deadline_ms;
    let live = cfg.replay.is_none();
    let bus = Bus::new(Clock::new(clock));
    let _tcp = if live {
        let addr =
            resolve_addr(a.graph.bus_addr.as_deref().or(config.bus_addr.as_deref()).unwrap_or(DEFAULT_BUS_ADDR))?;
        let server = serve_tcp(&bus, addr).map_err(|e| AppError::Domain(format!("bus listener {addr}: {e}")))?;
        println!("bus listening on {}", server.local_addr());
        Some(server)
    } else {
        None
    };
    let result = app::play(&bus, cfg, |h| on_interrupt(&h))?;
    write_log(a.graph.out.as_deref().or(Some(Path::new("session_log.json"))), &result, a.graph.seed.or(config.seed))?;
    print_summary(&result);
    Ok(())
}

fn serve(a: ServeArgs, config: &RunConfig) -> Result<(), AppError> {
    let (mut cfg, clock) = session_config(&a.graph, config, a.looping)?;
    cfg.linger = !a.once;
    cfg.engine.autostart = !a.manual_start;
    let bus_addr =
        resolve_addr(a.graph.bus_addr.as_deref().or(config.bus_addr.as_deref()).unwrap_or(DEFAULT_BUS_ADDR))?;
    let ws_addr = if a.no_ws {
        None
    } else {
        Some(resolve_addr(a.ws_addr.as_deref().or(config.ws_addr.as_deref()).unwrap_or(DEFAULT_WS_ADDR))?)
    };
    let server = app::Server::start(Clock::new(clock), bus_addr, ws_addr, WsOptions::default(), cfg)?;
    {
        let mut out = io::stdout().lock();
        let _ = writeln!(out, "bus listening on {}", server.tcp.local_addr());
        if let Some(ws) = &server.ws {
            let _ = writeln!(out, "websocket bridge on {}", ws.local_addr());
        }
        let _ = out.flush();
    }
    on_interrupt(server.handles());
    let result = server.wait();
    write_log(a.graph.out.as_deref(), &result, a.graph.seed.or(config.seed))?;
    print_summary(&result);
    Ok(())
}
