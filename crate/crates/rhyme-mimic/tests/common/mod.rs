#![allow(dead_code)]

use rhyme_mimic::app::DEFAULT_SPREAD;
use rhyme_mimic::nodes::{EngineOptions, LatencyModel};
use rhyme_mimic::session::{Replay, SessionConfig};
use rhyme_mimic::synthetic::{gen_session_stream, gen_synthetic, StreamOptions, StreamTruth, ANCHORS};
use rhyme_mimic::wire::FrameRecord;
use rhyme_mimic_core::game::{uniform_script, RhymeScript};
use rhyme_mimic_core::gmm::{train, GmmClassifier, TrainingConfig};
use rhyme_mimic_core::ConfidenceThreshold;

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn classifier() -> GmmClassifier {
    let data = gen_synthetic(8, 30, DEFAULT_SPREAD, 7).unwrap();
    train(&data, &TrainingConfig { rng_seed: 7, ..Default::default() }).unwrap()
}

/// Peripheral timings short enough for real-clock tests.
pub fn quick_latency() -> LatencyModel {
    LatencyModel { display_ms: 50, audio_ms: 200, tts_ms: 150, motion_ms: 200 }
}

/// A short script over the first `n` anchors with quick timings.
pub fn quick_script(n: usize) -> RhymeScript {
    let poses: Vec<&str> = ANCHORS[..n].iter().map(|a| a.label).collect();
    uniform_script("Quick", &poses, 200, 1200)
}

pub fn quick_stream(script: &RhymeScript, held: &[bool], seed: u64) -> (Vec<FrameRecord>, StreamTruth) {
    let opts = StreamOptions { seed, latency: quick_latency(), ..Default::default() };
    gen_session_stream(script, held, &opts).unwrap()
}

pub fn config(script: RhymeScript, latency: LatencyModel, frames: Vec<FrameRecord>, rate: f64) -> SessionConfig {
    SessionConfig {
        script,
        classifier: classifier(),
        threshold: ConfidenceThreshold::DEFAULT,
        latency,
        engine: EngineOptions::default(),
        strict_resources: true,
        replay: Some(Replay { frames, rate, looping: false }),
        deadline_ms: None,
        linger: false,
    }
}

use std::sync::{Arc, Mutex};

use rhyme_mimic::bus::BusMessage;
use rhyme_mimic::node::{Context, Node};
use serde_json::Value;

pub type Recorded = Arc<Mutex<Vec<(u64, BusMessage)>>>;

/// Records every message on its topics with the executor time of arrival.
pub struct Recorder {
    pub topics: Vec<String>,
    pub seen: Recorded,
}

impl Recorder {
    pub fn new(topics: &[&str]) -> Self {
        Recorder { topics: topics.iter().map(|t| t.to_string()).collect(), seen: Recorded::default() }
    }
}

impl Node for Recorder {
    fn name(&self) -> &str {
        "recorder"
    }

    fn subscriptions(&self) -> Vec<String> {
        self.topics.clone()
    }

    fn on_message(&mut self, msg: &BusMessage, ctx: &mut Context<'_>) {
        self.seen.lock().unwrap().push((ctx.now_ms(), msg.clone()));
    }
}

/// Publishes a fixed list of messages at fixed times.
pub struct Driver {
    pub plan: Vec<(u64, String, Value)>,
    next: usize,
}

impl Driver {
    pub fn new(plan: Vec<(u64, &str, Value)>) -> Self {
        Driver { plan: plan.into_iter().map(|(t, topic, v)| (t, topic.to_string(), v)).collect(), next: 0 }
    }
}

impl Node for Driver {
    fn name(&self) -> &str {
        "driver"
    }

    fn subscriptions(&self) -> Vec<String> {
        vec![]
    }

    fn on_start(&mut self, ctx: &mut Context<'_>) {
        if let Some((t, _, _)) = self.plan.first() {
            ctx.set_timer(0, *t);
        }
    }

    fn on_message(&mut self, _: &BusMessage, _: &mut Context<'_>) {}

    fn on_timer(&mut self, _: u64, ctx: &mut Context<'_>) {
        while let Some((t, topic, payload)) = self.plan.get(self.next) {
            if *t > ctx.now_ms() {
                ctx.set_timer(0, *t);
                return;
            }
            ctx.publish(topic, payload.clone());
            self.next += 1;
        }
    }

    fn is_done(&self) -> bool {
        self.next >= self.plan.len()
    }
}
