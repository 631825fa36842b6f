//! Candidate execution: the runner wire protocol and executors.
//!
//! The runner is an external process that reads one JSON request per line on
//! stdin and answers with one JSON response per line on stdout, after a
//! handshake line announcing protocol version "1".

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: &str = "1";
/// Upper bound on a single request's timeout.
pub const MAX_TIMEOUT_S: f64 = 60.0;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("invalid exec request: {0}")]
    InvalidRequest(String),
    #[error("runner protocol error: {0}")]
    Protocol(String),
    #[error("could not start runner `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("runner i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub code_text: String,
    pub test_text: String,
    pub entry_point: String,
    pub timeout_s: f64,
}

impl ExecRequest {
    pub fn validate(&self) -> Result<(), ExecError> {
        if !(self.timeout_s > 0.0 && self.timeout_s <= MAX_TIMEOUT_S) {
            return Err(ExecError::InvalidRequest(format!(
                "timeout_s must be in (0, {MAX_TIMEOUT_S}], got {}",
                self.timeout_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    None,
    Assertion,
    Exception,
    Timeout,
    Crash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecResult {
    pub passed: bool,
    pub error_kind: ErrorKind,
    #[serde(default)]
    pub detail: String,
    #[serde(default)]
    pub duration_ms: u64,
}

impl ExecResult {
    pub fn pass() -> Self {
        Self {
            passed: true,
            error_kind: ErrorKind::None,
            detail: String::new(),
            duration_ms: 0,
        }
    }

    pub fn fail(error_kind: ErrorKind, detail: impl Into<String>) -> Self {
        Self {
            passed: false,
            error_kind,
            detail: detail.into(),
            duration_ms: 0,
        }
    }

    fn check(self) -> Result<Self, ExecError> {
        if self.passed != (self.error_kind == ErrorKind::None) {
            return Err(ExecError::Protocol(format!(
                "passed={} with error_kind={:?}",
                self.passed, self.error_kind
            )));
        }
        Ok(self)
    }
}

/// Anything that can run a candidate against its tests.
pub trait Executor: Send + Sync {
    fn evaluate(&self, req: &ExecRequest) -> Result<ExecResult, ExecError>;
}

impl<T: Executor + ?Sized> Executor for &T {
    fn evaluate(&self, req: &ExecRequest) -> Result<ExecResult, ExecError> {
        (**self).evaluate(req)
    }
}

impl<T: Executor + ?Sized> Executor for Box<T> {
    fn evaluate(&self, req: &ExecRequest) -> Result<ExecResult, ExecError> {
        (**self).evaluate(req)
    }
}

type Verdict = dyn Fn(&ExecRequest) -> bool + Send + Sync;

/// Executor that decides pass/fail without running anything.
pub struct MockExecutor {
    verdict: Box<Verdict>,
    calls: AtomicUsize,
}

impl std::fmt::Debug for MockExecutor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockExecutor").field("calls", &self.calls()).finish()
    }
}

impl MockExecutor {
    pub fn from_fn(f: impl Fn(&ExecRequest) -> bool + Send + Sync + 'static) -> Self {
        Self {
            verdict: Box::new(f),
            calls: AtomicUsize::new(0),
        }
    }

    /// Passes exactly the listed code texts.
    pub fn passing<I, S>(codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = codes.into_iter().map(Into::into).collect();
        Self::from_fn(move |req| set.contains(&req.code_text))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Executor for MockExecutor {
    fn evaluate(&self, req: &ExecRequest) -> Result<ExecResult, ExecError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        req.validate()?;
        Ok(if (self.verdict)(req) {
            ExecResult::pass()
        } else {
            ExecResult::fail(ErrorKind::Assertion, "mock verdict")
        })
    }
}

/// Checks a handshake line. Accepts the version under `protocol`,
/// `protocol_version` or `version`, as a string or an integer.
pub fn parse_handshake(line: &str) -> Result<(), ExecError> {
    let v: serde_json::Value = serde_json::from_str(line.trim())
        .map_err(|e| ExecError::Protocol(format!("bad handshake {line:?}: {e}")))?;
    let version = ["protocol", "protocol_version", "version"]
        .iter()
        .find_map(|k| v.get(k))
        .map(|x| match x {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        });
    match version.as_deref() {
        Some(PROTOCOL_VERSION) => Ok(()),
        Some(other) => Err(ExecError::Protocol(format!("runner speaks protocol {other}, want {PROTOCOL_VERSION}"))),
        None => Err(ExecError::Protocol(format!("handshake has no protocol version: {line:?}"))),
    }
}

/// Parses one response line. A runner-side error record (no `passed`
/// field) is a protocol error.
pub fn parse_response(line: &str) -> Result<ExecResult, ExecError> {
    let r: ExecResult = serde_json::from_str(line.trim())
        .map_err(|e| ExecError::Protocol(format!("bad response {line:?}: {e}")))?;
    r.check()
}

struct RunnerProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl RunnerProcess {
    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Client for one runner process. Requests are serialized; a runner that
/// stops answering is killed and respawned on the next request.
pub struct RunnerClient {
    command: Vec<String>,
    /// Extra wait beyond the request timeout before the runner is declared
    /// unresponsive.
    grace: Duration,
    handshake_timeout: Duration,
    process: Mutex<Option<RunnerProcess>>,
    spawns: AtomicUsize,
}

impl std::fmt::Debug for RunnerClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunnerClient")
            .field("command", &self.command)
            .field("spawns", &self.spawns())
            .finish()
    }
}

impl RunnerClient {
    pub fn new(command: Vec<String>) -> Result<Self, ExecError> {
        if command.is_empty() {
            return Err(ExecError::InvalidRequest("empty runner command".into()));
        }
        Ok(Self {
            command,
            grace: Duration::from_secs(2),
            handshake_timeout: Duration::from_secs(20),
            process: Mutex::new(None),
            spawns: AtomicUsize::new(0),
        })
    }

    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    /// Number of runner processes started so far.
    pub fn spawns(&self) -> usize {
        self.spawns.load(Ordering::SeqCst)
    }

    fn spawn(&self) -> Result<RunnerProcess, ExecError> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ExecError::Spawn {
                command: self.command.join(" "),
                source,
            })?;
        self.spawns.fetch_add(1, Ordering::SeqCst);
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) if l.trim().is_empty() => continue,
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        let proc = RunnerProcess {
            child,
            stdin,
            lines: rx,
        };
        match proc.lines.recv_timeout(self.handshake_timeout) {
            Ok(line) => match parse_handshake(&line) {
                Ok(()) => Ok(proc),
                Err(e) => {
                    proc.kill();
                    Err(e)
                }
            },
            Err(_) => {
                proc.kill();
                Err(ExecError::Protocol("runner sent no handshake".into()))
            }
        }
    }
}

impl Executor for RunnerClient {
    fn evaluate(&self, req: &ExecRequest) -> Result<ExecResult, ExecError> {
        req.validate()?;
        let mut slot = self.process.lock().unwrap_or_else(|p| p.into_inner());
        if slot.is_none() {
            *slot = Some(self.spawn()?);
        }
        let mut line = serde_json::to_string(req).expect("request serializes");
        line.push('\n');
        let started = Instant::now();
        let proc = slot.as_mut().expect("runner present");
        if proc.stdin.write_all(line.as_bytes()).and_then(|_| proc.stdin.flush()).is_err() {
            slot.take().expect("runner present").kill();
            return Ok(crash("runner stdin closed", started));
        }
        let wait = Duration::from_secs_f64(req.timeout_s) + self.grace;
        match proc.lines.recv_timeout(wait) {
            Ok(resp) => parse_response(&resp),
            Err(RecvTimeoutError::Timeout) => {
                tracing::warn!(timeout_s = req.timeout_s, "runner unresponsive, restarting");
                slot.take().expect("runner present").kill();
                let mut r = ExecResult::fail(ErrorKind::Timeout, "runner did not answer in time");
                r.duration_ms = started.elapsed().as_millis() as u64;
                Ok(r)
            }
            Err(RecvTimeoutError::Disconnected) => {
                tracing::warn!("runner exited, restarting");
                slot.take().expect("runner present").kill();
                Ok(crash("runner exited", started))
            }
        }
    }
}

fn crash(detail: &str, started: Instant) -> ExecResult {
    let mut r = ExecResult::fail(ErrorKind::Crash, detail);
    r.duration_ms = started.elapsed().as_millis() as u64;
    r
}

impl Drop for RunnerClient {
    fn drop(&mut self) {
        if let Some(p) = self.process.get_mut().ok().and_then(Option::take) {
            p.kill();
        }
    }
}

/// Several runner processes used in parallel.
#[derive(Debug)]
pub struct RunnerPool {
    clients: Vec<RunnerClient>,
    next: AtomicUsize,
}

impl RunnerPool {
    pub fn new(command: Vec<String>, size: usize) -> Result<Self, ExecError> {
        let clients = (0..size.max(1))
            .map(|_| RunnerClient::new(command.clone()))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            clients,
            next: AtomicUsize::new(0),
        })
    }
}

impl Executor for RunnerPool {
    fn evaluate(&self, req: &ExecRequest) -> Result<ExecResult, ExecError> {
        let k = self.next.fetch_add(1, Ordering::Relaxed) % self.clients.len();
        self.clients[k].evaluate(req)
    }
}
