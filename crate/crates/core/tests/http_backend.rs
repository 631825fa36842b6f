//! HttpBackend against a local completions server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use pragmatic_rerank::backend::{BackendConfig, BackendError, GenRequest, HttpBackend, InflightProbe, ScoreRequest};
use pragmatic_rerank::ScoringBackend;
use serde_json::{json, Value};

#[derive(Default)]
struct ServerState {
    bodies: Mutex<Vec<Vec<u8>>>,
    auth: Mutex<Vec<Option<String>>>,
    fail_first: AtomicUsize,
    delay_ms: AtomicUsize,
    active: AtomicUsize,
    peak: AtomicUsize,
}

/// Whitespace-led tokens: each token is a run of whitespace followed by a
/// run of non-whitespace. Returns (char offset, text).
fn tokenize(text: &str) -> Vec<(usize, String)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = i;
        while i < chars.len() && chars[i].is_whitespace() {
            i += 1;
        }
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        out.push((start, chars[start..i].iter().collect()));
    }
    out
}

fn token_logprob(tok: &str) -> f64 {
    -(0.1 + 0.01 * tok.chars().count() as f64)
}

fn respond(body: &Value) -> Value {
    let prompt = body["prompt"].as_str().unwrap_or_default();
    if body["echo"].as_bool() == Some(true) {
        let mut toks = tokenize(prompt);
        // the one generated token, past the end of the echoed text
        toks.push((prompt.chars().count(), " gen".into()));
        let mut lps: Vec<Value> = toks.iter().map(|(_, t)| json!(token_logprob(t))).collect();
        lps[0] = Value::Null;
        let logprobs = if prompt.contains("NOLOGPROBS") {
            Value::Null
        } else {
            json!({
                "tokens": toks.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>(),
                "token_logprobs": lps,
                "text_offset": toks.iter().map(|(o, _)| *o).collect::<Vec<_>>(),
            })
        };
        return json!({"choices": [{"index": 0, "text": format!("{prompt} gen"), "logprobs": logprobs}]});
    }
    let n = body["n"].as_u64().unwrap_or(1) as usize;
    // choices deliberately out of order
    let choices: Vec<Value> = (0..n)
        .rev()
        .map(|i| json!({"index": i, "text": format!("def f():\n    return {i}\n```\ntrailing")}))
        .collect();
    json!({"choices": choices})
}

fn handle(stream: TcpStream, state: Arc<ServerState>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut out = stream;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let mut len = 0usize;
        let mut auth = None;
        loop {
            let mut h = String::new();
            if reader.read_line(&mut h).unwrap_or(0) == 0 {
                return;
            }
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            let (k, v) = h.split_once(':').unwrap();
            match k.to_ascii_lowercase().as_str() {
                "content-length" => len = v.trim().parse().unwrap(),
                "authorization" => auth = Some(v.trim().to_string()),
                _ => {}
            }
        }
        let mut body = vec![0u8; len];
        reader.read_exact(&mut body).unwrap();

        let now = state.active.fetch_add(1, Ordering::SeqCst) + 1;
        state.peak.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(state.delay_ms.load(Ordering::SeqCst) as u64));
        state.bodies.lock().unwrap().push(body.clone());
        state.auth.lock().unwrap().push(auth);
        let failing = state
            .fail_first
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        let (status, payload) = if failing {
            ("503 Service Unavailable", "{\"error\": \"busy\"}".to_string())
        } else {
            let v: Value = serde_json::from_slice(&body).unwrap();
            ("200 OK", respond(&v).to_string())
        };
        state.active.fetch_sub(1, Ordering::SeqCst);
        let head = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n",
            payload.len()
        );
        if out.write_all(head.as_bytes()).and_then(|_| out.write_all(payload.as_bytes())).is_err() {
            return;
        }
    }
}

fn server() -> (String, Arc<ServerState>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let state = Arc::new(ServerState::default());
    let s = state.clone();
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let s = s.clone();
            thread::spawn(move || handle(stream, s));
        }
    });
    (url, state)
}

fn backend(url: &str) -> BackendConfig {
    let mut cfg = BackendConfig::new(url, "test-model");
    cfg.retry_base_delay = Duration::from_millis(5);
    cfg.request_timeout = Duration::from_secs(10);
    cfg
}

#[test]
fn echo_scoring_counts_only_continuation_tokens() {
    let (url, _) = server();
    let b = HttpBackend::new(backend(&url)).unwrap();
    let prompt = "Sum a list.\n```python\n";
    let cont = "def f(xs):\n    return sum(xs)\n";
    let r = b.score_continuation(&ScoreRequest::new(prompt, cont).unwrap()).unwrap();
    // tokens of the full text: "Sum", " a", " list.", "\n```python", "\ndef",
    // " f(xs):", "\n    return", " sum(xs)", "\n"; the first continuation
    // token "\ndef" straddles the boundary and is counted
    let want: f64 = ["\ndef", " f(xs):", "\n    return", " sum(xs)", "\n"]
        .iter()
        .map(|t| token_logprob(t))
        .sum();
    assert_eq!(r.token_count, 5);
    assert!((r.total_logprob - want).abs() < 1e-12, "{} vs {want}", r.total_logprob);
}

#[test]
fn scoring_is_deterministic_and_sends_echo() {
    let (url, state) = server();
    let b = HttpBackend::new(backend(&url)).unwrap();
    let req = ScoreRequest::new("A prompt", " and more").unwrap();
    let a = b.score_continuation(&req).unwrap();
    assert_eq!(a, b.score_continuation(&req).unwrap());
    let bodies = state.bodies.lock().unwrap();
    let v: Value = serde_json::from_slice(&bodies[0]).unwrap();
    assert_eq!(v["echo"], json!(true));
    assert_eq!(v["logprobs"], json!(1));
    assert_eq!(v["temperature"], json!(0.0));
    assert_eq!(v["model"], json!("test-model"));
    assert_eq!(v["prompt"], json!("A prompt and more"));
}

#[test]
fn missing_logprobs_is_a_protocol_error() {
    let (url, _) = server();
    let b = HttpBackend::new(backend(&url)).unwrap();
    let err = b.score_continuation(&ScoreRequest::new("NOLOGPROBS", " x").unwrap()).unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)), "{err:?}");
}

#[test]
fn retries_resend_identical_bytes() {
    let (url, state) = server();
    state.fail_first.store(2, Ordering::SeqCst);
    let mut cfg = backend(&url);
    cfg.auth_token = Some("sekret".into());
    let b = HttpBackend::new(cfg).unwrap();
    b.score_continuation(&ScoreRequest::new("p", " q").unwrap()).unwrap();
    let bodies = state.bodies.lock().unwrap();
    assert_eq!(bodies.len(), 3);
    assert!(bodies.iter().all(|x| x == &bodies[0]));
    assert!(state.auth.lock().unwrap().iter().all(|a| a.as_deref() == Some("Bearer sekret")));
}

#[test]
fn retries_give_up_with_transport_error() {
    let (url, state) = server();
    state.fail_first.store(100, Ordering::SeqCst);
    let mut cfg = backend(&url);
    cfg.max_retries = 2;
    let b = HttpBackend::new(cfg).unwrap();
    let err = b.score_continuation(&ScoreRequest::new("p", " q").unwrap()).unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)));
    assert_eq!(state.bodies.lock().unwrap().len(), 3);
}

#[test]
fn concurrency_stays_bounded() {
    let (url, state) = server();
    state.delay_ms.store(40, Ordering::SeqCst);
    let mut cfg = backend(&url);
    cfg.max_concurrent_requests = 3;
    let probe = Arc::new(InflightProbe::default());
    let b = Arc::new(HttpBackend::new(cfg).unwrap().with_probe(probe.clone()));
    let handles: Vec<_> = (0..12)
        .map(|i| {
            let b = b.clone();
            thread::spawn(move || b.score_continuation(&ScoreRequest::new("p", format!(" {i}")).unwrap()).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert!(probe.peak() <= 3, "peak {}", probe.peak());
    assert!(probe.peak() >= 2, "requests never overlapped");
    assert!(state.peak.load(Ordering::SeqCst) <= 3);
    assert_eq!(probe.total(), 12);
    assert_eq!(probe.current(), 0);
}

#[test]
fn generate_returns_ordered_truncated_samples() {
    let (url, state) = server();
    let b = HttpBackend::new(backend(&url)).unwrap();
    let req = GenRequest {
        prompt_text: "Sum a list.\n```python\n".into(),
        sampling_temperature: 1.0,
        max_tokens: 64,
        stop_markers: vec!["```".into()],
    };
    let out = b.generate(&req, 10).unwrap();
    assert_eq!(out.len(), 10);
    for (i, s) in out.iter().enumerate() {
        assert_eq!(s, &format!("def f():\n    return {i}\n"));
    }
    let v: Value = serde_json::from_slice(&state.bodies.lock().unwrap()[0]).unwrap();
    assert_eq!(v["n"], json!(10));
    assert_eq!(v["temperature"], json!(1.0));
    assert_eq!(v["stop"], json!(["```"]));
}

#[test]
fn config_is_validated() {
    assert!(HttpBackend::new(BackendConfig::new("", "m")).is_err());
    let mut cfg = BackendConfig::new("http://localhost:1", "m");
    cfg.max_concurrent_requests = 0;
    assert!(HttpBackend::new(cfg).is_err());
}
