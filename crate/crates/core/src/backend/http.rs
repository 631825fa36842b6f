use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    truncate_at_stop, BackendConfig, BackendError, GenRequest, ScoreRequest, ScoreResult,
    ScoringBackend,
};

/// Client for an OpenAI-style `/completions` endpoint.
///
/// Scoring submits `prompt + continuation` with `echo` and `logprobs`
/// enabled and sums the log-probabilities of the tokens that cover the
/// continuation. Token ownership is decided by character offsets: a token
/// belongs to the continuation when its span ends after the last prompt
/// character. A token straddling the boundary is therefore counted as a
/// continuation token.
pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
    limiter: Limiter,
    probe: Option<Arc<InflightProbe>>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.config.base_url)
            .field("model", &self.config.model_name)
            .finish_non_exhaustive()
    }
}

/// Tracks how many HTTP requests are in flight, and the peak.
#[derive(Debug, Default)]
pub struct InflightProbe {
    current: AtomicUsize,
    peak: AtomicUsize,
    total: AtomicUsize,
}

impl InflightProbe {
    pub fn current(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }
    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
    /// Number of HTTP attempts made, retries included.
    pub fn total(&self) -> usize {
        self.total.load(Ordering::SeqCst)
    }
    fn enter(&self) {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.total.fetch_add(1, Ordering::SeqCst);
    }
    fn leave(&self) {
        self.current.fetch_sub(1, Ordering::SeqCst);
    }
}

struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(permits: usize) -> Self {
        Self {
            available: Mutex::new(permits),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit { limiter: self }
    }
}

struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.limiter.freed.notify_one();
    }
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    index: Option<usize>,
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

/// The `logprobs` object of a completions choice.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub(crate) struct Logprobs {
    #[serde(default)]
    pub tokens: Vec<String>,
    #[serde(default)]
    pub token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    pub text_offset: Vec<usize>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            limiter: Limiter::new(config.max_concurrent_requests),
            config,
            client,
            probe: None,
        })
    }

    pub fn with_probe(mut self, probe: Arc<InflightProbe>) -> Self {
        self.probe = Some(probe);
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// POSTs `body` (serialized once, so every retry is byte-identical) with
    /// exponential backoff on transport failures, 429 and 5xx.
    fn post(&self, body: &serde_json::Value) -> Result<CompletionResponse, BackendError> {
        let bytes = serde_json::to_vec(body).expect("request body serializes");
        let mut attempt = 0u32;
        loop {
            let outcome = self.send_once(&bytes);
            match outcome {
                Ok(resp) => return Ok(resp),
                Err((retryable, err)) => {
                    if !retryable || attempt >= self.config.max_retries {
                        return Err(err);
                    }
                    let delay = self.config.retry_base_delay * 2u32.saturating_pow(attempt);
                    tracing::warn!(attempt, ?delay, error = %err, "retrying completions request");
                    thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }

    fn send_once(&self, bytes: &[u8]) -> Result<CompletionResponse, (bool, BackendError)> {
        let _permit = self.limiter.acquire();
        if let Some(p) = &self.probe {
            p.enter();
        }
        let result = self.send_inner(bytes);
        if let Some(p) = &self.probe {
            p.leave();
        }
        result
    }

    fn send_inner(&self, bytes: &[u8]) -> Result<CompletionResponse, (bool, BackendError)> {
        let mut req = self
            .client
            .post(self.endpoint())
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(bytes.to_vec());
        if let Some(token) = &self.config.auth_token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| (true, BackendError::Transport(e.to_string())))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| (true, BackendError::Transport(e.to_string())))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err((true, BackendError::Transport(format!("HTTP {status}: {text}"))));
        }
        if !status.is_success() {
            return Err((false, BackendError::Transport(format!("HTTP {status}: {text}"))));
        }
        serde_json::from_str(&text)
            .map_err(|e| (false, BackendError::Protocol(format!("bad response body: {e}"))))
    }
}

/// Sums the log-probabilities of the echoed tokens that cover the
/// continuation. `prompt_chars` and `full_chars` are character counts of the
/// prompt and of prompt + continuation; tokens starting at or beyond
/// `full_chars` were generated, not echoed, and are ignored.
pub(crate) fn continuation_logprob(
    logprobs: &Logprobs,
    prompt_chars: usize,
    full_chars: usize,
) -> Result<ScoreResult, BackendError> {
    let n = logprobs.text_offset.len();
    if n == 0 || logprobs.token_logprobs.len() != n {
        return Err(BackendError::Protocol(
            "response lacks per-token log-probabilities or offsets".into(),
        ));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        let start = logprobs.text_offset[i];
        if start >= full_chars {
            break;
        }
        let end = logprobs
            .text_offset
            .get(i + 1)
            .copied()
            .unwrap_or(full_chars)
            .min(full_chars);
        if end <= prompt_chars {
            continue;
        }
        let lp = logprobs.token_logprobs[i].ok_or_else(|| {
            BackendError::Protocol(format!("continuation token {i} has no log-probability"))
        })?;
        if !lp.is_finite() {
            return Err(BackendError::Protocol(format!("token {i} log-probability {lp}")));
        }
        total += lp;
        count += 1;
    }
    if count == 0 {
        return Err(BackendError::Protocol("no continuation tokens in response".into()));
    }
    Ok(ScoreResult {
        total_logprob: total,
        token_count: count,
    })
}

impl ScoringBackend for HttpBackend {
    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn score_continuation(&self, req: &ScoreRequest) -> Result<ScoreResult, BackendError> {
        if req.continuation_text.is_empty() {
            return Err(BackendError::InvalidRequest("empty continuation".into()));
        }
        let full = format!("{}{}", req.prompt_text, req.continuation_text);
        // max_tokens 1: some servers reject 0 with echo; the generated token
        // starts past the end of `full` and is skipped during alignment.
        let body = json!({
            "model": self.config.model_name,
            "prompt": full,
            "echo": true,
            "logprobs": 1,
            "max_tokens": 1,
            "temperature": 0.0,
        });
        let resp = self.post(&body)?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
        let logprobs = choice
            .logprobs
            .ok_or_else(|| BackendError::Protocol("response lacks logprobs".into()))?;
        continuation_logprob(
            &logprobs,
            req.prompt_text.chars().count(),
            full.chars().count(),
        )
    }

    fn generate(&self, req: &GenRequest, num_samples: usize) -> Result<Vec<String>, BackendError> {
        req.validate()?;
        if num_samples == 0 {
            return Err(BackendError::InvalidRequest("num_samples must be >= 1".into()));
        }
        let mut out: Vec<String> = Vec::with_capacity(num_samples);
        let mut rounds = 0u32;
        while out.len() < num_samples {
            let missing = num_samples - out.len();
            let mut body = json!({
                "model": self.config.model_name,
                "prompt": req.prompt_text,
                "n": missing,
                "temperature": req.sampling_temperature,
                "max_tokens": req.max_tokens,
            });
            if !req.stop_markers.is_empty() {
                body["stop"] = json!(req.stop_markers);
            }
            let resp = self.post(&body)?;
            let mut choices = resp.choices;
            choices.sort_by_key(|c| c.index.unwrap_or(usize::MAX));
            let mut empty = 0usize;
            for c in choices.into_iter().take(missing) {
                let text = truncate_at_stop(&c.text, &req.stop_markers);
                if text.trim().is_empty() {
                    empty += 1;
                } else {
                    out.push(text.to_string());
                }
            }
            if out.len() < num_samples {
                if rounds >= self.config.max_retries {
                    return Err(BackendError::EmptyCompletion {
                        requested: num_samples,
                        empty: num_samples - out.len(),
                    });
                }
                tracing::warn!(empty, "dropping empty completions and resampling");
                rounds += 1;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(tokens: &[(&str, Option<f64>)]) -> Logprobs {
        let mut offset = 0;
        let mut out = Logprobs::default();
        for (t, p) in tokens {
            out.tokens.push(t.to_string());
            out.token_logprobs.push(*p);
            out.text_offset.push(offset);
            offset += t.chars().count();
        }
        out
    }

    #[test]
    fn prompt_tokens_are_discarded() {
        // prompt "Sum:\n" (5 chars), continuation "ret 1" (5 chars)
        let l = lp(&[
            ("Sum", None),
            (":", Some(-3.0)),
            ("\n", Some(-0.5)),
            ("ret", Some(-1.25)),
            (" 1", Some(-0.75)),
            ("<gen>", Some(-9.0)),
        ]);
        let r = continuation_logprob(&l, 5, 10).unwrap();
        assert_eq!(r.token_count, 2);
        assert!((r.total_logprob + 2.0).abs() < 1e-12);
    }

    #[test]
    fn straddling_token_counts_as_continuation() {
        // prompt "ab", continuation "cd"; the token "bc" straddles
        let l = lp(&[("a", None), ("bc", Some(-1.0)), ("d", Some(-2.0))]);
        let r = continuation_logprob(&l, 2, 4).unwrap();
        assert_eq!(r.token_count, 2);
        assert_eq!(r.total_logprob, -3.0);
    }

    #[test]
    fn missing_logprobs_are_protocol_errors() {
        assert!(matches!(
            continuation_logprob(&Logprobs::default(), 1, 2),
            Err(BackendError::Protocol(_))
        ));
        let l = lp(&[("a", None), ("b", None)]);
        assert!(matches!(continuation_logprob(&l, 1, 2), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn multibyte_text_uses_character_offsets() {
        // prompt "é:" is 2 chars but 3 bytes
        let l = lp(&[("é", None), (":", Some(-1.0)), ("ü", Some(-0.5))]);
        let r = continuation_logprob(&l, 2, 3).unwrap();
        assert_eq!(r.token_count, 1);
        assert_eq!(r.total_logprob, -0.5);
    }
}
