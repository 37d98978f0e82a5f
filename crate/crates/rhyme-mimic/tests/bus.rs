use std::collections::BTreeMap;
use std::thread;
use std::time::{Duration, Instant};

use rhyme_mimic::bus::tcp::{connect_tcp, serve_tcp};
use rhyme_mimic::bus::{topics, Bus, BusMessage, Endpoint};
use rhyme_mimic::clock::{Clock, ClockMode};
use serde_json::json;

const PUBLISHERS: usize = 3;
const PER_PUBLISHER: u64 = 100;

fn drain(ep: &dyn Endpoint, want: usize, within: Duration) -> Vec<BusMessage> {
    let deadline = Instant::now() + within;
    let mut got = Vec::new();
    while got.len() < want && Instant::now() < deadline {
        if let Some(m) = ep.recv_timeout(Duration::from_millis(20)) {
            if !topics::is_control(&m.topic) {
                got.push(m);
            }
        }
    }
    // anything further would be a duplicate
    while let Some(m) = ep.recv_timeout(Duration::from_millis(100)) {
        if !topics::is_control(&m.topic) {
            got.push(m);
        }
    }
    got
}

/// Each publisher's messages arrive once each, in the order sent, with
/// strictly increasing sequence numbers.
fn check_fifo(received: &[BusMessage]) {
    let mut by_node: BTreeMap<String, Vec<&BusMessage>> = BTreeMap::new();
    for m in received {
        by_node.entry(m.node_id.clone()).or_default().push(m);
    }
    assert_eq!(by_node.len(), PUBLISHERS, "publishers seen: {:?}", by_node.keys());
    for (node, msgs) in by_node {
        let ns: Vec<u64> = msgs.iter().map(|m| m.payload["n"].as_u64().unwrap()).collect();
        assert_eq!(ns, (0..PER_PUBLISHER).collect::<Vec<_>>(), "order from {node}");
        assert!(msgs.windows(2).all(|w| w[0].seq < w[1].seq), "seq from {node}");
    }
}

#[test]
fn in_process_fifo_and_at_most_once() {
    let bus = Bus::new(Clock::new(ClockMode::Real));
    let sink = bus.register("sink").unwrap();
    sink.subscribe(topics::POSE_CLASSIFIED).unwrap();
    let workers: Vec<_> = (0..PUBLISHERS)
        .map(|p| {
            let h = bus.register(&format!("pub{p}")).unwrap();
            thread::spawn(move || {
                for n in 0..PER_PUBLISHER {
                    h.publish(topics::POSE_CLASSIFIED, json!({ "p": p, "n": n })).unwrap();
                }
            })
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }
    let got = drain(&sink, PUBLISHERS * PER_PUBLISHER as usize, Duration::from_secs(5));
    assert_eq!(got.len(), PUBLISHERS * PER_PUBLISHER as usize);
    check_fifo(&got);
}

#[test]
fn tcp_fifo_and_at_most_once() {
    let bus = Bus::new(Clock::new(ClockMode::Real));
    let server = serve_tcp(&bus, "127.0.0.1:0").unwrap();
    let addr = server.local_addr();
    let local_sink = bus.register("local-sink").unwrap();
    local_sink.subscribe(topics::POSE_CLASSIFIED).unwrap();
    let remote_sink = connect_tcp(addr, "remote-sink").unwrap();
    remote_sink.subscribe(topics::POSE_CLASSIFIED).unwrap();

    let workers: Vec<_> = (0..PUBLISHERS)
        .map(|p| {
            thread::spawn(move || {
                let node = connect_tcp(addr, &format!("camera{p}")).unwrap();
                for n in 0..PER_PUBLISHER {
                    node.publish(topics::POSE_CLASSIFIED, json!({ "p": p, "n": n })).unwrap();
                }
                // keep the connection open until everything is flushed
                thread::sleep(Duration::from_millis(300));
            })
        })
        .collect();
    let total = PUBLISHERS * PER_PUBLISHER as usize;
    let remote = drain(&remote_sink, total, Duration::from_secs(10));
    let local = drain(&local_sink, total, Duration::from_secs(10));
    for w in workers {
        w.join().unwrap();
    }
    assert_eq!(local.len(), total);
    assert_eq!(remote.len(), total);
    check_fifo(&local);
    check_fifo(&remote);
}

#[test]
fn subscription_is_confirmed_before_returning() {
    let bus = Bus::new(Clock::new(ClockMode::Real));
    let server = serve_tcp(&bus, "127.0.0.1:0").unwrap();
    let remote = connect_tcp(server.local_addr(), "console").unwrap();
    remote.subscribe(topics::GAME_STATE).unwrap();
    assert!(bus.subscribers(topics::GAME_STATE).contains(&remote.node_id().to_string()));
    let engine = bus.register("engine").unwrap();
    engine.publish(topics::GAME_STATE, json!({ "phase": "Idle" })).unwrap();
    let m = drain(&remote, 1, Duration::from_secs(2));
    assert_eq!(m.len(), 1);
    assert_eq!(m[0].node_id, "engine");
}

#[test]
fn malformed_client_is_dropped_without_disturbing_others() {
    let bus = Bus::new(Clock::new(ClockMode::Real));
    let server = serve_tcp(&bus, "127.0.0.1:0").unwrap();
    let good = connect_tcp(server.local_addr(), "good").unwrap();
    good.subscribe(topics::GAME_STATE).unwrap();
    let bad = connect_tcp(server.local_addr(), "bad").unwrap();
    let bad_id = bad.node_id().to_string();
    bad.send_raw("{this is not json").unwrap();

    let deadline = Instant::now() + Duration::from_secs(3);
    while bus.node_ids().contains(&bad_id) && Instant::now() < deadline {
        thread::sleep(Duration::from_millis(10));
    }
    assert!(!bus.node_ids().contains(&bad_id), "malformed client still registered");
    assert_eq!(bus.diagnostics().protocol_errors, 1);

    let engine = bus.register("engine").unwrap();
    engine.publish(topics::GAME_STATE, json!({ "n": 1 })).unwrap();
    assert_eq!(drain(&good, 1, Duration::from_secs(2)).len(), 1);
}

#[test]
fn envelope_with_missing_fields_is_a_protocol_error() {
    let bus = Bus::new(Clock::new(ClockMode::Real));
    let server = serve_tcp(&bus, "127.0.0.1:0").unwrap();
    let bad = connect_tcp(server.local_addr(), "bad").unwrap();
    bad.send_raw(r#"{"topic":"game/state"}"#).unwrap();
    let deadline = Instant::now() + Duration::from_secs(3);
    while bus.diagnostics().protocol_errors == 0 && Instant::now() < deadline {
        thread::sleep(Duration::from_millis(10));
    }
    assert_eq!(bus.diagnostics().protocol_errors, 1);
}

#[test]
fn connecting_to_a_closed_port_is_refused() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    assert!(connect_tcp(port, "late").is_err());
}

#[test]
fn remote_departure_is_announced() {
    let bus = Bus::new(Clock::new(ClockMode::Real));
    let server = serve_tcp(&bus, "127.0.0.1:0").unwrap();
    let watcher = bus.register("watcher").unwrap();
    watcher.subscribe(topics::BUS_DIAGNOSTICS).unwrap();
    let remote = connect_tcp(server.local_addr(), "console").unwrap();
    let id = remote.node_id().to_string();
    remote.disconnect();
    let deadline = Instant::now() + Duration::from_secs(3);
    let mut seen = false;
    while !seen && Instant::now() < deadline {
        if let Some(m) = watcher.recv_timeout(Duration::from_millis(20)) {
            seen = m.topic == topics::BUS_DIAGNOSTICS && m.payload.to_string().contains(&id);
        }
    }
    assert!(seen, "no departure notice for {id}");
    assert_eq!(bus.diagnostics().departures, vec![id]);
}
