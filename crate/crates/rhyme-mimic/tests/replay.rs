mod common;

use common::Recorder;
use rhyme_mimic::bus::{topics, Bus, BusMessage};
use rhyme_mimic::clock::{Clock, ClockMode};
use rhyme_mimic::node::{Executor, StopReason};
use rhyme_mimic::nodes::{ReplayError, ReplayNode};
use rhyme_mimic::wire::FrameRecord;

const SPACING_MS: u64 = 20;
const FRAMES: u64 = 51;

fn frames() -> Vec<FrameRecord> {
    (0..FRAMES).map(|i| FrameRecord { timestamp_ms: 5_000 + i * SPACING_MS, people: vec![] }).collect()
}

fn play(mode: ClockMode, rate: f64, looping: bool, deadline: Option<u64>) -> (StopReason, Vec<(u64, BusMessage)>, u64) {
    let bus = Bus::new(Clock::new(mode));
    let mut ex = Executor::new(bus.clock().clone());
    let recorder = Recorder::new(&[topics::POSE_FRAMES]);
    let seen = recorder.seen.clone();
    ex.add_local(&bus, recorder).unwrap();
    let node = ReplayNode::new(&frames(), rate, looping).unwrap();
    let emitted = node.emitted();
    let r = ex.add_local(&bus, node).unwrap();
    ex.await_node(r);
    ex.set_deadline_ms(deadline);
    let outcome = ex.run();
    let seen = seen.lock().unwrap().clone();
    (outcome.reason, seen, emitted.load(std::sync::atomic::Ordering::Relaxed))
}

fn stamps(seen: &[(u64, BusMessage)]) -> Vec<u64> {
    seen.iter().map(|(_, m)| m.payload["timestamp_ms"].as_u64().unwrap()).collect()
}

fn span(seen: &[(u64, BusMessage)]) -> f64 {
    (seen.last().unwrap().0 - seen.first().unwrap().0) as f64
}

#[test]
fn real_time_playback_keeps_the_recorded_pace() {
    let (reason, seen, _) = play(ClockMode::Real, 1.0, false, None);
    assert_eq!(reason, StopReason::Done);
    assert_eq!(seen.len(), FRAMES as usize);
    let recorded = ((FRAMES - 1) * SPACING_MS) as f64;
    assert!((span(&seen) - recorded).abs() <= 0.05 * recorded, "span {}", span(&seen));
}

#[test]
fn double_rate_halves_the_span() {
    let (_, seen, _) = play(ClockMode::Real, 2.0, false, None);
    let expected = ((FRAMES - 1) * SPACING_MS) as f64 / 2.0;
    assert!((span(&seen) - expected).abs() <= 0.05 * expected, "span {}", span(&seen));
}

#[test]
fn virtual_playback_lands_exactly_on_schedule() {
    let (_, seen, _) = play(ClockMode::Virtual, 0.5, false, None);
    let arrivals: Vec<u64> = seen.iter().map(|(t, _)| *t).collect();
    assert_eq!(arrivals, (0..FRAMES).map(|i| i * SPACING_MS * 2).collect::<Vec<_>>());
}

#[test]
fn rate_zero_sends_everything_without_advancing_time() {
    let (reason, seen, emitted) = play(ClockMode::Virtual, 0.0, false, None);
    assert_eq!(reason, StopReason::Done);
    assert_eq!(emitted, FRAMES);
    assert!(seen.iter().all(|(t, _)| *t == 0));
    assert_eq!(stamps(&seen), frames().iter().map(|f| f.timestamp_ms).collect::<Vec<_>>());
}

#[test]
fn looping_keeps_timestamps_increasing() {
    let pass = FRAMES * SPACING_MS;
    let (reason, seen, emitted) = play(ClockMode::Virtual, 1.0, true, Some(3 * pass + 10));
    assert_eq!(reason, StopReason::Deadline);
    assert!(emitted >= 3 * FRAMES, "emitted {emitted}");
    let ts = stamps(&seen);
    assert!(ts.windows(2).all(|w| w[0] < w[1]));
    assert!(ts.windows(2).all(|w| w[1] - w[0] == SPACING_MS));
}

#[test]
fn invalid_rates_are_rejected() {
    for rate in [-1.0, f64::NAN, f64::INFINITY] {
        assert!(matches!(ReplayNode::new(&frames(), rate, false), Err(ReplayError::BadRate(_))));
    }
}
