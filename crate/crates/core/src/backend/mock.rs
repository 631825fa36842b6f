use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use super::{truncate_at_stop, BackendError, GenRequest, ScoreRequest, ScoreResult, ScoringBackend};

type ScoreFallback = Box<dyn Fn(&str, &str) -> Option<Vec<f64>> + Send + Sync>;
type GenFallback = Box<dyn Fn(&str, usize) -> Option<String> + Send + Sync>;

/// Deterministic in-memory backend.
///
/// Scores come from a table of per-token log-probabilities keyed by the
/// exact (prompt, continuation) pair; generations come from per-prompt
/// scripts that are cycled through in order. Optional fallbacks cover pairs
/// and prompts that are not in the tables. The backend is immutable after
/// [`MockBackendBuilder::build`]; only the call counters change.
pub struct MockBackend {
    model: String,
    scores: HashMap<(String, String), Vec<f64>>,
    scripts: HashMap<String, Vec<String>>,
    score_fallback: Option<ScoreFallback>,
    gen_fallback: Option<GenFallback>,
    max_retries: usize,
    score_calls: AtomicUsize,
    gen_calls: AtomicUsize,
}

impl fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MockBackend")
            .field("model", &self.model)
            .field("scores", &self.scores.len())
            .field("scripts", &self.scripts.len())
            .field("score_calls", &self.score_calls())
            .field("gen_calls", &self.gen_calls())
            .finish()
    }
}

impl MockBackend {
    pub fn builder() -> MockBackendBuilder {
        MockBackendBuilder::default()
    }

    /// Number of `score_continuation` calls received so far.
    pub fn score_calls(&self) -> usize {
        self.score_calls.load(Ordering::SeqCst)
    }

    /// Number of `generate` calls received so far.
    pub fn gen_calls(&self) -> usize {
        self.gen_calls.load(Ordering::SeqCst)
    }

    fn completion(&self, prompt: &str, index: usize) -> Result<String, BackendError> {
        if let Some(script) = self.scripts.get(prompt) {
            if !script.is_empty() {
                return Ok(script[index % script.len()].clone());
            }
        }
        self.gen_fallback
            .as_ref()
            .and_then(|f| f(prompt, index))
            .ok_or(BackendError::UnknownPrompt {
                prompt_chars: prompt.chars().count(),
            })
    }
}

impl ScoringBackend for MockBackend {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn score_continuation(&self, req: &ScoreRequest) -> Result<ScoreResult, BackendError> {
        self.score_calls.fetch_add(1, Ordering::SeqCst);
        if req.continuation_text.is_empty() {
            return Err(BackendError::InvalidRequest("empty continuation".into()));
        }
        let key = (req.prompt_text.clone(), req.continuation_text.clone());
        let tokens = match self.scores.get(&key) {
            Some(t) => t.clone(),
            None => self
                .score_fallback
                .as_ref()
                .and_then(|f| f(&req.prompt_text, &req.continuation_text))
                .ok_or(BackendError::UnknownPair {
                    prompt_chars: req.prompt_text.chars().count(),
                })?,
        };
        if tokens.is_empty() {
            return Err(BackendError::Protocol("mock entry has no tokens".into()));
        }
        Ok(ScoreResult {
            total_logprob: tokens.iter().sum(),
            token_count: tokens.len(),
        })
    }

    fn generate(&self, req: &GenRequest, num_samples: usize) -> Result<Vec<String>, BackendError> {
        self.gen_calls.fetch_add(1, Ordering::SeqCst);
        req.validate()?;
        if num_samples == 0 {
            return Err(BackendError::InvalidRequest("num_samples must be >= 1".into()));
        }
        let mut out = Vec::with_capacity(num_samples);
        let mut cursor = 0usize;
        let mut empty = 0usize;
        for _ in 0..num_samples {
            let mut attempts = 0usize;
            loop {
                let raw = self.completion(&req.prompt_text, cursor)?;
                cursor += 1;
                let text = truncate_at_stop(&raw, &req.stop_markers);
                if !text.trim().is_empty() {
                    out.push(text.to_string());
                    break;
                }
                tracing::debug!(cursor, "mock completion empty after truncation");
                if attempts == self.max_retries {
                    empty += 1;
                    break;
                }
                attempts += 1;
            }
        }
        if empty > 0 {
            return Err(BackendError::EmptyCompletion {
                requested: num_samples,
                empty,
            });
        }
        Ok(out)
    }
}

pub struct MockBackendBuilder {
    model: String,
    scores: HashMap<(String, String), Vec<f64>>,
    scripts: HashMap<String, Vec<String>>,
    score_fallback: Option<ScoreFallback>,
    gen_fallback: Option<GenFallback>,
    max_retries: usize,
}

impl Default for MockBackendBuilder {
    fn default() -> Self {
        Self {
            model: "mock".into(),
            scores: HashMap::new(),
            scripts: HashMap::new(),
            score_fallback: None,
            gen_fallback: None,
            max_retries: 2,
        }
    }
}

impl MockBackendBuilder {
    pub fn model_name(mut self, name: impl Into<String>) -> Self {
        self.model = name.into();
        self
    }

    pub fn max_retries(mut self, n: usize) -> Self {
        self.max_retries = n;
        self
    }

    /// Registers per-token probabilities (converted to natural logs).
    pub fn token_probs(self, prompt: impl Into<String>, continuation: impl Into<String>, probs: &[f64]) -> Self {
        let logs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        self.token_logprobs(prompt, continuation, &logs)
    }

    pub fn token_logprobs(
        mut self,
        prompt: impl Into<String>,
        continuation: impl Into<String>,
        logprobs: &[f64],
    ) -> Self {
        self.scores
            .insert((prompt.into(), continuation.into()), logprobs.to_vec());
        self
    }

    /// Registers a pair whose log-probability is `total`, spread evenly over
    /// `tokens` tokens.
    pub fn total_logprob(
        self,
        prompt: impl Into<String>,
        continuation: impl Into<String>,
        total: f64,
        tokens: usize,
    ) -> Self {
        let tokens = tokens.max(1);
        let mut logs = vec![total / tokens as f64; tokens];
        // put the rounding residue on the last token so the sum is `total`
        let head: f64 = logs[..tokens - 1].iter().sum();
        logs[tokens - 1] = total - head;
        self.token_logprobs(prompt, continuation, &logs)
    }

    pub fn script<I, S>(mut self, prompt: impl Into<String>, completions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.scripts
            .insert(prompt.into(), completions.into_iter().map(Into::into).collect());
        self
    }

    pub fn score_fallback(
        mut self,
        f: impl Fn(&str, &str) -> Option<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.score_fallback = Some(Box::new(f));
        self
    }

    pub fn gen_fallback(mut self, f: impl Fn(&str, usize) -> Option<String> + Send + Sync + 'static) -> Self {
        self.gen_fallback = Some(Box::new(f));
        self
    }

    pub fn build(self) -> MockBackend {
        MockBackend {
            model: self.model,
            scores: self.scores,
            scripts: self.scripts,
            score_fallback: self.score_fallback,
            gen_fallback: self.gen_fallback,
            max_retries: self.max_retries,
            score_calls: AtomicUsize::new(0),
            gen_calls: AtomicUsize::new(0),
        }
    }
}

/// Deterministic pseudo log-probabilities for a continuation.
///
/// Tokens are whitespace-separated words. A word that also occurs in the
/// prompt is cheap (between -0.05 and -0.35), any other word costs between
/// -0.8 and -2.0; the exact value is derived from a SHA-256 of the word,
/// its position and the prompt. Useful for mock worlds that need plausible
/// structure without hand-writing every entry.
pub fn synthetic_token_logprobs(prompt: &str, continuation: &str) -> Vec<f64> {
    let prompt_words: std::collections::HashSet<String> =
        prompt.split_whitespace().map(normalize_word).collect();
    let prompt_digest = Sha256::digest(prompt.as_bytes());
    let words: Vec<&str> = continuation.split_whitespace().collect();
    let words = if words.is_empty() { vec![continuation] } else { words };
    words
        .iter()
        .enumerate()
        .map(|(pos, word)| {
            let mut h = Sha256::new();
            h.update(prompt_digest);
            h.update((pos as u64).to_le_bytes());
            h.update(word.as_bytes());
            let d = h.finalize();
            let unit = u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) as f64 / u64::MAX as f64;
            if prompt_words.contains(&normalize_word(word)) {
                -0.05 - 0.3 * unit
            } else {
                -0.8 - 1.2 * unit
            }
        })
        .collect()
}

fn normalize_word(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(prompt: &str, stops: &[&str]) -> GenRequest {
        GenRequest {
            prompt_text: prompt.into(),
            sampling_temperature: 1.0,
            max_tokens: 64,
            stop_markers: stops.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn two_half_probability_tokens() {
        let m = MockBackend::builder().token_probs("p", "ab", &[0.5, 0.5]).build();
        let r = m.score_continuation(&ScoreRequest::new("p", "ab").unwrap()).unwrap();
        assert!((r.total_logprob - 0.25f64.ln()).abs() < 1e-12);
        assert!((r.total_logprob + 1.386294).abs() < 1e-6);
        assert_eq!(r.token_count, 2);
    }

    #[test]
    fn certain_single_token_scores_zero() {
        let m = MockBackend::builder().token_probs("p", "x", &[1.0]).build();
        let r = m.score_continuation(&ScoreRequest::new("p", "x").unwrap()).unwrap();
        assert_eq!(r.total_logprob, 0.0);
        assert_eq!(r.token_count, 1);
    }

    #[test]
    fn unknown_pair_is_an_error() {
        let m = MockBackend::builder().build();
        let err = m.score_continuation(&ScoreRequest::new("p", "x").unwrap()).unwrap_err();
        assert!(matches!(err, BackendError::UnknownPair { .. }));
        assert_eq!(m.score_calls(), 1);
    }

    #[test]
    fn total_logprob_helper_sums_exactly() {
        let m = MockBackend::builder().total_logprob("p", "c", -21.12, 7).build();
        let r = m.score_continuation(&ScoreRequest::new("p", "c").unwrap()).unwrap();
        assert!((r.total_logprob + 21.12).abs() < 1e-12);
        assert_eq!(r.token_count, 7);
    }

    #[test]
    fn scripted_passthrough_and_cycling() {
        let m = MockBackend::builder().script("p", ["a", "b"]).build();
        assert_eq!(m.generate(&gen("p", &[]), 2).unwrap(), vec!["a", "b"]);
        assert_eq!(m.generate(&gen("p", &[]), 3).unwrap(), vec!["a", "b", "a"]);
        assert_eq!(m.gen_calls(), 2);
    }

    #[test]
    fn stop_marker_is_removed() {
        let m = MockBackend::builder()
            .script("p", ["def f():\n    return 1\n```\nmore text"])
            .build();
        let out = m.generate(&gen("p", &["```"]), 1).unwrap();
        assert_eq!(out, vec!["def f():\n    return 1\n"]);
        assert!(!out[0].contains("```"));
    }

    #[test]
    fn empty_completions_are_retried_then_reported() {
        let m = MockBackend::builder().script("p", ["```", "x"]).build();
        assert_eq!(m.generate(&gen("p", &["```"]), 1).unwrap(), vec!["x"]);

        let m = MockBackend::builder().max_retries(3).script("p", ["```"]).build();
        let err = m.generate(&gen("p", &["```"]), 2).unwrap_err();
        assert!(matches!(err, BackendError::EmptyCompletion { requested: 2, empty: 2 }));
    }

    #[test]
    fn synthetic_scores_are_deterministic_and_prompt_sensitive() {
        let a = synthetic_token_logprobs("sum of a list", "return sum(xs)");
        assert_eq!(a, synthetic_token_logprobs("sum of a list", "return sum(xs)"));
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|v| *v < 0.0));
        let cheap = synthetic_token_logprobs("sum", "sum");
        let dear = synthetic_token_logprobs("product", "sum");
        assert!(cheap[0] > dear[0]);
    }

    #[test]
    fn additivity_matches_table() {
        let toks = [-0.25, -1.5, -0.125, -3.0];
        let m = MockBackend::builder().token_logprobs("p", "c", &toks).build();
        let r = m.score_continuation(&ScoreRequest::new("p", "c").unwrap()).unwrap();
        assert!((r.total_logprob - toks.iter().sum::<f64>()).abs() <= 1e-12);
    }
}
