//! RunnerClient against a scripted runner process.

use std::process::Command;
use std::time::{Duration, Instant};

use pragmatic_rerank::harness::{ErrorKind, ExecRequest, Executor, RunnerClient, RunnerPool};

fn python() -> Option<Vec<String>> {
    let ok = Command::new("python3").arg("-c").arg("pass").status().map(|s| s.success()).unwrap_or(false);
    if !ok {
        eprintln!("python3 not available, skipping");
        return None;
    }
    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/support/fake_runner.py");
    Some(vec!["python3".into(), "-u".into(), script.into()])
}

fn req(code: &str, test: &str, timeout_s: f64) -> ExecRequest {
    ExecRequest {
        code_text: code.into(),
        test_text: test.into(),
        entry_point: "f".into(),
        timeout_s,
    }
}

const GOOD: &str = "def f(x):\n    return x + 1\n";

#[test]
fn pass_and_fail_kinds() {
    let Some(cmd) = python() else { return };
    let client = RunnerClient::new(cmd).unwrap();
    let r = client.evaluate(&req(GOOD, "assert f(1) == 2", 5.0)).unwrap();
    assert!(r.passed);
    assert_eq!(r.error_kind, ErrorKind::None);

    let r = client.evaluate(&req(GOOD, "assert f(1) == 3", 5.0)).unwrap();
    assert!(!r.passed);
    assert_eq!(r.error_kind, ErrorKind::Assertion);

    let r = client.evaluate(&req(GOOD, "f(None)", 5.0)).unwrap();
    assert_eq!(r.error_kind, ErrorKind::Exception);
    assert!(r.detail.contains("TypeError"), "{}", r.detail);
    // one process served all three
    assert_eq!(client.spawns(), 1);
}

#[test]
fn hang_is_killed_and_runner_respawned() {
    let Some(cmd) = python() else { return };
    let client = RunnerClient::new(cmd).unwrap().with_grace(Duration::from_millis(200));
    let started = Instant::now();
    let r = client.evaluate(&req("HANG = 1", "", 0.5)).unwrap();
    assert_eq!(r.error_kind, ErrorKind::Timeout);
    assert!(started.elapsed() < Duration::from_secs(5));

    let r = client.evaluate(&req(GOOD, "assert f(0) == 1", 5.0)).unwrap();
    assert!(r.passed);
    assert_eq!(client.spawns(), 2);
}

#[test]
fn crash_then_next_request_is_answered() {
    let Some(cmd) = python() else { return };
    let client = RunnerClient::new(cmd).unwrap();
    let r = client.evaluate(&req("CRASH = 1", "", 5.0)).unwrap();
    assert!(!r.passed);
    assert_eq!(r.error_kind, ErrorKind::Crash);
    let r = client.evaluate(&req(GOOD, "assert f(2) == 3", 5.0)).unwrap();
    assert!(r.passed);
    assert_eq!(client.spawns(), 2);
}

#[test]
fn malformed_response_is_an_error() {
    let Some(cmd) = python() else { return };
    let client = RunnerClient::new(cmd).unwrap();
    assert!(client.evaluate(&req("BADJSON = 1", "", 5.0)).is_err());
    // the stream is still in sync afterwards
    assert!(client.evaluate(&req(GOOD, "assert f(1) == 2", 5.0)).unwrap().passed);
}

#[test]
fn missing_handshake_is_rejected() {
    let Some(_) = python() else { return };
    let cmd = vec!["python3".into(), "-c".into(), "print('hello', flush=True)".into()];
    let client = RunnerClient::new(cmd).unwrap();
    assert!(client.evaluate(&req(GOOD, "", 5.0)).is_err());
}

#[test]
fn out_of_range_timeout_is_refused_before_sending() {
    let Some(cmd) = python() else { return };
    let client = RunnerClient::new(cmd).unwrap();
    assert!(client.evaluate(&req(GOOD, "", 0.0)).is_err());
    assert!(client.evaluate(&req(GOOD, "", 61.0)).is_err());
    assert_eq!(client.spawns(), 0);
}

#[test]
fn pool_spreads_work() {
    let Some(cmd) = python() else { return };
    let pool = RunnerPool::new(cmd, 3).unwrap();
    let results: Vec<bool> = std::thread::scope(|s| {
        let hs: Vec<_> = (0..9)
            .map(|i| {
                let pool = &pool;
                s.spawn(move || {
                    let test = format!("assert f({i}) == {}", i + 1 + i % 2);
                    pool.evaluate(&req(GOOD, &test, 5.0)).unwrap().passed
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let want: Vec<bool> = (0..9).map(|i| i % 2 == 0).collect();
    assert_eq!(results, want);
}
