mod common;

use std::thread;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use rhyme_mimic::bus::tcp::{connect_tcp, serve_tcp};
use rhyme_mimic::bus::{topics, Bus, Endpoint};
use rhyme_mimic::clock::{Clock, ClockMode};
use rhyme_mimic::nodes::LatencyModel;
use rhyme_mimic::session::{Session, SessionResult};
use rhyme_mimic::synthetic::{demo_script, gen_session_stream, StreamOptions, StreamTruth};
use rhyme_mimic_core::game::{session_summary, Command, PeripheralKind, Phase, RhymeScript};

fn run_virtual(
    script: RhymeScript,
    latency: LatencyModel,
    truth_frames: Vec<rhyme_mimic::wire::FrameRecord>,
) -> SessionResult {
    let bus = Bus::new(Clock::new(ClockMode::Virtual));
    let session = Session::assemble(&bus, common::config(script, latency, truth_frames, 1.0)).unwrap();
    session.run()
}

fn assert_matches_truth(result: &SessionResult, truth: &StreamTruth) {
    let imitated: Vec<bool> = result.log.outcomes().map(|o| o.imitated).collect();
    assert_eq!(imitated, truth.held);
    assert!(result.log.is_complete());
    let entered: Vec<u64> = result
        .log
        .records
        .iter()
        .filter(|r| {
            matches!(r.after.phase, Phase::Singing { repeats_used: 0, .. })
                && r.before.phase.line() != r.after.phase.line()
        })
        .map(|r| r.at_ms)
        .collect();
    assert_eq!(entered, truth.line_start_ms);
    assert_eq!(result.ended_at_ms, truth.expected_end_ms);
}

#[test]
fn bundled_session_agrees_with_ground_truth() {
    let script = demo_script();
    let held = [true, true, false, true, true, false, true, false];
    let (frames, truth) = gen_session_stream(&script, &held, &StreamOptions { seed: 3, ..Default::default() }).unwrap();
    let started = Instant::now();
    let result = run_virtual(script.clone(), LatencyModel::default(), frames);
    assert!(started.elapsed() < Duration::from_secs(10));
    assert_eq!(result.stop_reason, "finished");
    assert_matches_truth(&result, &truth);
    result.log.replay(&script).unwrap();
    assert_eq!(result.summary, Some(session_summary(&result.log).unwrap()));
    assert_eq!(result.summary.as_ref().unwrap().imitated_count, 5);
}

#[test]
fn virtual_sessions_are_deterministic() {
    let script = common::quick_script(3);
    let (frames, _) = common::quick_stream(&script, &[true, false, true], 9);
    let a = run_virtual(script.clone(), common::quick_latency(), frames.clone());
    let b = run_virtual(script, common::quick_latency(), frames);
    assert_eq!(a.log, b.log);
    assert_eq!(a.pipeline, b.pipeline);
    assert_eq!(a.peripherals, b.peripherals);
}

#[test]
fn every_peripheral_command_is_acknowledged() {
    let script = common::quick_script(4);
    let (frames, _) = common::quick_stream(&script, &[true, false, false, true], 2);
    let result = run_virtual(script, common::quick_latency(), frames);
    let issued = |kind: PeripheralKind| {
        result
            .log
            .records
            .iter()
            .flat_map(|r| &r.commands)
            .filter(|c| matches!(c, Command::Peripheral(p) if p.kind == kind))
            .count()
    };
    for p in &result.peripherals {
        assert_eq!(p.commands, issued(p.kind), "{:?}", p.kind);
        assert_eq!(p.acks, p.commands, "{:?}", p.kind);
        assert_eq!(p.failed, 0);
    }
}

#[test]
fn frames_without_the_child_leave_only_timeouts() {
    let script = common::quick_script(2);
    let (mut frames, truth) = common::quick_stream(&script, &[true, true], 4);
    for f in &mut frames {
        f.people.clear();
    }
    let result = run_virtual(script, common::quick_latency(), frames);
    assert!(result.log.outcomes().all(|o| !o.imitated));
    assert!(result.pipeline.no_person > 0);
    assert_eq!(result.pipeline.classified, 0);
    assert!(result.ended_at_ms > truth.expected_end_ms);
}

#[test]
fn stopping_flushes_a_partial_aborted_log() {
    let script = common::quick_script(3);
    let (frames, _) = common::quick_stream(&script, &[true, true, true], 1);
    let bus = Bus::new(Clock::new(ClockMode::Real));
    let session = Session::assemble(&bus, common::config(script, common::quick_latency(), frames, 1.0)).unwrap();
    let handles = session.handles();
    let runner = thread::spawn(move || session.run());
    thread::sleep(Duration::from_millis(400));
    handles.stop();
    let result = runner.join().unwrap();
    assert_eq!(result.stop_reason, "stopped");
    assert!(result.log.is_complete());
    let summary = result.summary.unwrap();
    assert!(summary.aborted);
    assert!(summary.lines_attempted < 3);
}

#[test]
fn console_disconnect_does_not_disturb_the_session() {
    let script = common::quick_script(3);
    let held = [true, false, true];
    let (frames, truth) = common::quick_stream(&script, &held, 5);
    let bus = Bus::new(Clock::new(ClockMode::Real));
    let server = serve_tcp(&bus, "127.0.0.1:0").unwrap();
    let session = Session::assemble(&bus, common::config(script, common::quick_latency(), frames, 1.0)).unwrap();
    let runner = thread::spawn(move || session.run());

    let console = connect_tcp(server.local_addr(), "console").unwrap();
    console.subscribe(topics::GAME_STATE).unwrap();
    console.subscribe(topics::POSE_FRAMES).unwrap();
    let mut states = 0;
    let deadline = Instant::now() + Duration::from_secs(5);
    while states < 3 && Instant::now() < deadline {
        if let Some(m) = console.recv_timeout(Duration::from_millis(50)) {
            states += usize::from(m.topic == topics::GAME_STATE);
        }
    }
    assert!(states >= 3);
    console.disconnect();

    let result = runner.join().unwrap();
    let imitated: Vec<bool> = result.log.outcomes().map(|o| o.imitated).collect();
    assert_eq!(imitated, truth.held);
    assert_eq!(result.bus.departures.len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn outcomes_follow_any_held_pattern(held in proptest::collection::vec(any::<bool>(), 1..=4), seed in 0u64..1000) {
        let script = common::quick_script(held.len());
        let (frames, truth) = common::quick_stream(&script, &held, seed);
        let result = run_virtual(script.clone(), common::quick_latency(), frames);
        assert_matches_truth(&result, &truth);
        prop_assert!(result.log.replay(&script).is_ok());
    }
}
