//! Text-model access: scoring fixed continuations and sampling completions.
//!
//! [`ScoringBackend`] is the only way the rest of the crate talks to a model.
//! [`HttpBackend`] speaks the completions protocol with echoed per-token
//! log-probabilities, [`MockBackend`] replays a fixed table, and
//! [`CachedBackend`] puts a content-addressed disk cache in front of either.

mod cache;
mod http;
mod mock;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use cache::unix_now;
pub use cache::{CacheError, CachedBackend, DiskCache, ScoreRecord};
pub use http::{HttpBackend, InflightProbe};
pub use mock::{synthetic_token_logprobs, MockBackend, MockBackendBuilder};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no mock entry for prompt/continuation pair (prompt {prompt_chars} chars)")]
    UnknownPair { prompt_chars: usize },
    #[error("no mock script for generation prompt ({prompt_chars} chars)")]
    UnknownPrompt { prompt_chars: usize },
    #[error("{empty} of {requested} completions were empty after truncation and retries")]
    EmptyCompletion { requested: usize, empty: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// A prompt and the fixed continuation whose log-probability is wanted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt_text: String,
    pub continuation_text: String,
}

impl ScoreRequest {
    pub fn new(
        prompt_text: impl Into<String>,
        continuation_text: impl Into<String>,
    ) -> Result<Self, BackendError> {
        let req = Self {
            prompt_text: prompt_text.into(),
            continuation_text: continuation_text.into(),
        };
        if req.continuation_text.is_empty() {
            return Err(BackendError::InvalidRequest("empty continuation".into()));
        }
        Ok(req)
    }
}

/// Sum of the continuation's token log-probabilities (natural log).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub total_logprob: f64,
    pub token_count: usize,
}

/// A sampling request. Temperature 0 asks for greedy decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt_text: String,
    pub sampling_temperature: f64,
    pub max_tokens: u32,
    pub stop_markers: Vec<String>,
}

impl GenRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.sampling_temperature.is_finite() && self.sampling_temperature >= 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "sampling temperature {}",
                self.sampling_temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub base_url: String,
    pub model_name: String,
    pub auth_token: Option<String>,
    pub request_timeout: Duration,
    pub max_retries: u32,
    pub max_concurrent_requests: usize,
    /// First retry delay; doubles on each further attempt.
    pub retry_base_delay: Duration,
}

impl BackendConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            auth_token: None,
            request_timeout: Duration::from_secs(120),
            max_retries: 3,
            max_concurrent_requests: 8,
            retry_base_delay: Duration::from_millis(500),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.base_url.trim().is_empty() {
            return Err(BackendError::InvalidRequest("base_url is empty".into()));
        }
        if self.request_timeout.is_zero() {
            return Err(BackendError::InvalidRequest("request timeout must be > 0".into()));
        }
        if self.max_concurrent_requests == 0 {
            return Err(BackendError::InvalidRequest(
                "max_concurrent_requests must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Uniform access to a text model.
///
/// Implementations must be callable from many threads at once.
pub trait ScoringBackend: Send + Sync {
    fn model_name(&self) -> &str;

    /// Log-probability of `continuation_text` given `prompt_text`. Prompt
    /// tokens contribute nothing.
    fn score_continuation(&self, req: &ScoreRequest) -> Result<ScoreResult, BackendError>;

    /// Exactly `num_samples` completions, each truncated at its first stop
    /// marker, in backend order.
    fn generate(&self, req: &GenRequest, num_samples: usize) -> Result<Vec<String>, BackendError>;
}

impl<T: ScoringBackend + ?Sized> ScoringBackend for &T {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
    fn score_continuation(&self, req: &ScoreRequest) -> Result<ScoreResult, BackendError> {
        (**self).score_continuation(req)
    }
    fn generate(&self, req: &GenRequest, num_samples: usize) -> Result<Vec<String>, BackendError> {
        (**self).generate(req, num_samples)
    }
}

impl<T: ScoringBackend + ?Sized> ScoringBackend for Arc<T> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
    fn score_continuation(&self, req: &ScoreRequest) -> Result<ScoreResult, BackendError> {
        (**self).score_continuation(req)
    }
    fn generate(&self, req: &GenRequest, num_samples: usize) -> Result<Vec<String>, BackendError> {
        (**self).generate(req, num_samples)
    }
}

impl<T: ScoringBackend + ?Sized> ScoringBackend for Box<T> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
    fn score_continuation(&self, req: &ScoreRequest) -> Result<ScoreResult, BackendError> {
        (**self).score_continuation(req)
    }
    fn generate(&self, req: &GenRequest, num_samples: usize) -> Result<Vec<String>, BackendError> {
        (**self).generate(req, num_samples)
    }
}

/// Cuts `text` at the earliest occurrence of any stop marker.
pub fn truncate_at_stop<'a>(text: &'a str, stop_markers: &[String]) -> &'a str {
    let cut = stop_markers
        .iter()
        .filter(|m| !m.is_empty())
        .filter_map(|m| text.find(m.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_uses_earliest_marker() {
        let stops = vec!["```".to_string(), "\nEND".to_string()];
        assert_eq!(truncate_at_stop("abc\nEND x ``` y", &stops), "abc");
        assert_eq!(truncate_at_stop("abc``` y\nEND", &stops), "abc");
        assert_eq!(truncate_at_stop("plain", &stops), "plain");
        assert_eq!(truncate_at_stop("plain", &[String::new()]), "plain");
    }

    #[test]
    fn requests_are_validated() {
        assert!(ScoreRequest::new("p", "").is_err());
        assert!(ScoreRequest::new("", "x").is_ok());
        let mut gen = GenRequest {
            prompt_text: "p".into(),
            sampling_temperature: 0.7,
            max_tokens: 16,
            stop_markers: vec![],
        };
        assert!(gen.validate().is_ok());
        gen.sampling_temperature = -1.0;
        assert!(gen.validate().is_err());
        gen.sampling_temperature = 1.0;
        gen.max_tokens = 0;
        assert!(gen.validate().is_err());

        let mut cfg = BackendConfig::new("http://localhost:8000/v1", "m");
        assert!(cfg.validate().is_ok());
        cfg.base_url = " ".into();
        assert!(cfg.validate().is_err());
        cfg.base_url = "http://x".into();
        cfg.request_timeout = Duration::ZERO;
        assert!(cfg.validate().is_err());
    }
}
