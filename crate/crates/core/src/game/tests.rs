use super::*;
use alloc::string::ToString;
use alloc::vec;
use proptest::prelude::*;

fn script(n: usize) -> RhymeScript {
    let poses: Vec<String> = (0..n).map(|i| alloc::format!("p{i}")).collect();
    let refs: Vec<&str> = poses.iter().map(String::as_str).collect();
    uniform_script("test", &refs, 100, 1000)
}

fn pose(label: &str) -> GameEvent {
    GameEvent::PoseObserved { label: label.to_string(), score: -1.0, timestamp_ms: 0 }
}

fn woz(command: WozCommand) -> GameEvent {
    GameEvent::Woz { command }
}

fn kinds(cmds: &[Command]) -> Vec<PeripheralKind> {
    cmds.iter()
        .filter_map(|c| match c {
            Command::Peripheral(p) => Some(p.kind),
            _ => None,
        })
        .collect()
}

#[test]
fn start_sings_first_line() {
    let s = script(5);
    let t = start_session(&GameState::new("s"), &s, 0).unwrap();
    assert_eq!(t.state.phase, Phase::Singing { line: 0, repeats_used: 0 });
    assert_eq!(kinds(&t.commands), vec![PeripheralKind::Display, PeripheralKind::Audio, PeripheralKind::Motion]);
    assert_eq!(t.state.started_at_ms, Some(0));
    let Command::Peripheral(audio) = &t.commands[1] else { unreachable!() };
    assert_eq!(audio.duration_hint_ms, Some(100));
    assert_eq!(audio.resource, Resource::Ref("line0.wav".into()));

    assert_eq!(start_session(&t.state, &s, 5), Err(GameError::SessionActive));
}

#[test]
fn empty_script_finishes_immediately() {
    let t = start_session(&GameState::new("s"), &script(0), 0).unwrap();
    assert_eq!(t.state.phase, Phase::Finished);
    assert!(t.commands.is_empty());
    assert_eq!(start_session(&t.state, &script(0), 1), Err(GameError::SessionFinished));
}

#[test]
fn invalid_scripts() {
    let mut s = script(2);
    s.lines[1].index = 5;
    assert!(start_session(&GameState::new("s"), &s, 0).is_err());
    let mut s = script(2);
    s.lines[0].sing_duration_ms = 0;
    assert!(s.validate().is_err());
    let mut s = script(1);
    s.match_streak = 0;
    assert!(s.validate().is_err());
    assert!(script(2).validate_labels(["p0", "p1", "p2"]).is_ok());
    assert!(script(2).validate_labels(["p0"]).is_err());
}

#[test]
fn streak_completes_into_encouraging() {
    let s = script(3);
    let state = GameState {
        phase: Phase::WaitingForImitation { line: 2, repeats_used: 0, streak: 4 },
        progress: LineProgress { first_wait_ms: Some(1000), ..Default::default() },
        started_at_ms: Some(0),
        ..GameState::new("s")
    };
    let t = step(&state, &pose("p2"), 1500, &s);
    assert_eq!(t.state.phase, Phase::Encouraging { line: 2 });
    assert_eq!(t.commands[0], Command::DisarmTimeout);
    assert_eq!(kinds(&t.commands), vec![PeripheralKind::Tts, PeripheralKind::Display]);
    assert!(t.state.progress.imitated);
    assert_eq!(t.state.progress.latency_ms, Some(500));

    let done = step(&t.state, &GameEvent::EncourageDone { line: 2 }, 2000, &s);
    assert_eq!(done.state.phase, Phase::Finished);
    let outcome = done.record.outcome.unwrap();
    assert!(outcome.imitated && !outcome.aborted);
    assert_eq!(outcome.latency_ms, Some(500));
}

#[test]
fn mismatch_resets_streak() {
    let s = script(2);
    let state =
        GameState { phase: Phase::WaitingForImitation { line: 0, repeats_used: 0, streak: 3 }, ..GameState::new("s") };
    let t = step(&state, &pose("p1"), 10, &s);
    assert_eq!(t.state.phase, Phase::WaitingForImitation { line: 0, repeats_used: 0, streak: 0 });
    assert!(t.commands.is_empty());
}

#[test]
fn timeout_repeats_then_advances() {
    let s = script(2);
    let waiting =
        GameState { phase: Phase::WaitingForImitation { line: 0, repeats_used: 0, streak: 2 }, ..GameState::new("s") };
    let t = step(&waiting, &GameEvent::Timeout { line: 0 }, 10, &s);
    assert_eq!(t.state.phase, Phase::Singing { line: 0, repeats_used: 1 });
    assert_eq!(t.commands[0], Command::DisarmTimeout);
    assert_eq!(kinds(&t.commands).len(), 3);

    let exhausted =
        GameState { phase: Phase::WaitingForImitation { line: 0, repeats_used: 1, streak: 0 }, ..GameState::new("s") };
    let t = step(&exhausted, &GameEvent::Timeout { line: 0 }, 10, &s);
    assert_eq!(t.state.phase, Phase::Singing { line: 1, repeats_used: 0 });
    assert!(!t.record.outcome.unwrap().imitated);

    // stale timeout for another line is ignored
    let t = step(&exhausted, &GameEvent::Timeout { line: 1 }, 10, &s);
    assert_eq!(t.record.ignored, Some(IgnoreReason::StaleLine));
    assert_eq!(t.state, exhausted);
}

#[test]
fn illegal_events_are_logged_and_ignored() {
    let s = script(2);
    let idle = GameState::new("s");
    for ev in [pose("p0"), GameEvent::SingingDone { line: 0 }, woz(WozCommand::NextLine)] {
        let t = step(&idle, &ev, 0, &s);
        assert_eq!(t.record.ignored, Some(IgnoreReason::SessionInactive));
        assert_eq!(t.state, idle);
        assert!(t.commands.is_empty());
    }
    let singing = start_session(&idle, &s, 0).unwrap().state;
    let t = step(&singing, &pose("p0"), 1, &s);
    assert_eq!(t.record.ignored, Some(IgnoreReason::NotApplicable));
    let t = step(&singing, &GameEvent::Start, 1, &s);
    assert_eq!(t.record.ignored, Some(IgnoreReason::NotApplicable));
    let t = step(&singing, &woz(WozCommand::Resume), 1, &s);
    assert_eq!(t.record.ignored, Some(IgnoreReason::NotApplicable));
}

#[test]
fn pause_blocks_poses_and_freezes_timers() {
    let s = script(1);
    let waiting =
        GameState { phase: Phase::WaitingForImitation { line: 0, repeats_used: 0, streak: 0 }, ..GameState::new("s") };
    let paused = step(&waiting, &woz(WozCommand::Pause), 0, &s);
    assert_eq!(paused.commands, vec![Command::FreezeTimers]);
    assert!(paused.state.paused);
    let t = step(&paused.state, &pose("p0"), 1, &s);
    assert_eq!(t.record.ignored, Some(IgnoreReason::Paused));
    let resumed = step(&paused.state, &woz(WozCommand::Resume), 2, &s);
    assert_eq!(resumed.commands, vec![Command::ThawTimers]);
    assert!(!resumed.state.paused);
}

#[test]
fn woz_overrides() {
    let s = script(3);
    let waiting =
        GameState { phase: Phase::WaitingForImitation { line: 1, repeats_used: 1, streak: 2 }, ..GameState::new("s") };

    let t = step(&waiting, &woz(WozCommand::RepeatLine), 0, &s);
    // the operator's repeat does not consume the automatic budget
    assert_eq!(t.state.phase, Phase::Singing { line: 1, repeats_used: 1 });
    assert_eq!(t.commands[0], Command::DisarmTimeout);

    let t = step(&waiting, &woz(WozCommand::NextLine), 0, &s);
    assert_eq!(t.state.phase, Phase::Singing { line: 2, repeats_used: 0 });
    assert_eq!(t.record.outcome.unwrap().woz_interventions, 1);

    let t = step(&waiting, &woz(WozCommand::MarkSuccess), 0, &s);
    assert_eq!(t.state.phase, Phase::Encouraging { line: 1 });
    let t2 = step(&t.state, &woz(WozCommand::MarkSuccess), 0, &s);
    assert!(t2.record.ignored.is_some());

    let t = step(&waiting, &woz(WozCommand::Abort), 0, &s);
    assert_eq!(t.state.phase, Phase::Finished);
    assert!(t.record.outcome.unwrap().aborted);
    let t2 = step(&t.state, &woz(WozCommand::RepeatLine), 1, &s);
    assert_eq!(t2.record.ignored, Some(IgnoreReason::SessionInactive));
}

#[test]
fn command_ids_are_unique() {
    let s = script(3);
    let events = vec![
        (0, GameEvent::Start),
        (1, GameEvent::SingingDone { line: 0 }),
        (2, GameEvent::Timeout { line: 0 }),
        (3, woz(WozCommand::RepeatLine)),
        (4, woz(WozCommand::MarkSuccess)),
        (5, GameEvent::EncourageDone { line: 0 }),
    ];
    let (_, log) = run_events("s", &s, &events);
    let mut ids: Vec<u64> = log
        .records
        .iter()
        .flat_map(|r| r.commands.iter())
        .filter_map(|c| match c {
            Command::Peripheral(p) => Some(p.command_id),
            _ => None,
        })
        .collect();
    let n = ids.len();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), n);
    assert_eq!(n, 3 + 3 + 3 + 2 + 3);
}

/// Ten-event trace; the expected aggregate below was worked out by hand.
#[test]
fn mixed_trace_summary() {
    let mut s = script(3);
    s.match_streak = 2;
    let events = vec![
        (0, GameEvent::Start),
        (100, GameEvent::SingingDone { line: 0 }),
        (200, pose("p0")),
        (233, pose("p0")),
        (400, GameEvent::EncourageDone { line: 0 }),
        (500, GameEvent::SingingDone { line: 1 }),
        (1500, GameEvent::Timeout { line: 1 }),
        (1600, woz(WozCommand::MarkSuccess)),
        (1800, GameEvent::EncourageDone { line: 1 }),
        (1850, woz(WozCommand::Abort)),
    ];
    let (state, log) = run_events("s", &s, &events);
    assert_eq!(state.phase, Phase::Finished);
    assert_eq!(log.records.len(), 10);
    let summary = session_summary(&log).unwrap();
    assert_eq!(summary.lines_attempted, 3);
    assert_eq!(summary.imitated_count, 2);
    assert_eq!(summary.mean_latency_ms, Some((133.0 + 1100.0) / 2.0));
    assert_eq!(summary.repeats_per_line, vec![0, 1, 0]);
    assert_eq!(summary.woz_interventions, 2);
    assert_eq!(summary.ignored_events, 0);
    assert!(summary.aborted);
    assert_eq!(log.replay(&s).unwrap(), state);
}

#[test]
fn all_first_try() {
    let mut s = script(4);
    s.match_streak = 1;
    let mut events = vec![(0, GameEvent::Start)];
    for i in 0..4 {
        let t = 1000 * i as u64;
        events.push((t + 100, GameEvent::SingingDone { line: i }));
        events.push((t + 200, pose(&alloc::format!("p{i}"))));
        events.push((t + 300, GameEvent::EncourageDone { line: i }));
    }
    let (_, log) = run_events("s", &s, &events);
    let summary = session_summary(&log).unwrap();
    assert_eq!(summary.imitated_count, 4);
    assert_eq!(summary.repeats_per_line, vec![0; 4]);
    assert_eq!(summary.mean_latency_ms, Some(100.0));
}

#[test]
fn incomplete_log_has_no_summary() {
    let (_, log) = run_events("s", &script(2), &[(0, GameEvent::Start)]);
    assert_eq!(session_summary(&log), Err(GameError::IncompleteSession));
}

#[test]
fn replay_detects_tampering() {
    let s = script(2);
    let (_, mut log) = run_events("s", &s, &[(0, GameEvent::Start), (5, GameEvent::SingingDone { line: 0 })]);
    log.records[1].after.phase = Phase::Finished;
    assert_eq!(log.replay(&s), Err(ReplayError::Diverged { index: 1 }));
}

fn arb_event(lines: usize) -> impl Strategy<Value = GameEvent> {
    let line = 0..lines;
    prop_oneof![
        Just(GameEvent::Start),
        line.clone().prop_map(|line| GameEvent::SingingDone { line }),
        line.clone().prop_map(|line| GameEvent::Timeout { line }),
        line.clone().prop_map(|line| GameEvent::EncourageDone { line }),
        (0..lines + 1).prop_map(|i| pose(&alloc::format!("p{i}"))),
        prop_oneof![
            Just(WozCommand::RepeatLine),
            Just(WozCommand::NextLine),
            Just(WozCommand::MarkSuccess),
            Just(WozCommand::Pause),
            Just(WozCommand::Resume),
            Just(WozCommand::Abort),
        ]
        .prop_map(woz),
    ]
}

proptest! {
    #[test]
    fn invariants_hold_under_random_events(events in proptest::collection::vec(arb_event(3), 0..80), streak in 1u32..4, limit in 0u32..3) {
        let mut s = script(3);
        s.match_streak = streak;
        s.repeat_limit = limit;
        let timed: Vec<(u64, GameEvent)> = events.into_iter().enumerate().map(|(i, e)| (i as u64 * 10, e)).collect();
        let (state, log) = run_events("s", &s, &timed);
        prop_assert_eq!(log.records.len(), timed.len());
        for r in &log.records {
            if let Phase::WaitingForImitation { streak, repeats_used, .. } = r.after.phase {
                prop_assert!(streak < s.match_streak);
                prop_assert!(repeats_used <= s.repeat_limit);
            }
            if let Phase::Singing { repeats_used, .. } = r.after.phase {
                prop_assert!(repeats_used <= s.repeat_limit);
            }
        }
        prop_assert_eq!(log.replay(&s).unwrap(), state);
    }

    #[test]
    fn timeouts_always_finish(streak in 1u32..4, limit in 0u32..3, lines in 1usize..6) {
        // a child that never responds: every wait ends in a timeout
        let mut s = script(lines);
        s.match_streak = streak;
        s.repeat_limit = limit;
        let mut state = start_session(&GameState::new("s"), &s, 0).unwrap().state;
        let mut sing_cycles = 1;
        let mut t = 0;
        while state.phase != Phase::Finished {
            t += 1;
            let ev = match state.phase {
                Phase::Singing { line, .. } => GameEvent::SingingDone { line },
                Phase::WaitingForImitation { line, .. } => GameEvent::Timeout { line },
                other => panic!("unexpected {other:?}"),
            };
            let tr = step(&state, &ev, t, &s);
            if matches!(tr.state.phase, Phase::Singing { .. }) {
                sing_cycles += 1;
            }
            state = tr.state;
        }
        prop_assert_eq!(sing_cycles, lines * (limit as usize + 1));
    }
}
