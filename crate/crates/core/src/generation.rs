//! Candidate pools: sampling, exact-duplicate collapse and prior scoring.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, GenRequest, ScoreRequest, ScoringBackend};
use crate::prompts;
use crate::CandidateId;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("generation exhausted: {0}")]
    GenerationExhausted(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// One benchmark problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    /// The original instruction.
    pub instruction: String,
    /// Unfinished function the completion continues (empty when the model
    /// writes the whole program).
    #[serde(default)]
    pub prompt_scaffold: String,
    pub entry_point: String,
    /// Test-suite source, opaque to this crate.
    pub tests: String,
}

impl Task {
    /// Prompt used both to sample candidates and to score them under the
    /// original instruction (the scaffold, if any, is part of the
    /// candidate text).
    pub fn coder_prompt(&self) -> String {
        prompts::coder_prompt(&self.instruction)
    }
}

/// One sampled program and its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: CandidateId,
    pub code_text: String,
    /// `log P(code | original instruction)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coder_logprob: Option<f64>,
    /// `log P(code | empty context)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl Candidate {
    pub fn new(candidate_id: CandidateId, code_text: impl Into<String>) -> Self {
        Self {
            candidate_id,
            code_text: code_text.into(),
            coder_logprob: None,
            prior_logprob: None,
            z_score: None,
            tau: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub num_samples: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            num_samples: 10,
            temperature: 1.0,
            max_tokens: 512,
        }
    }
}

/// Result of [`sample_candidates`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub candidates: Vec<Candidate>,
    /// Samples dropped because an earlier sample had the same text.
    pub duplicates_collapsed: usize,
}

/// Samples `cfg.num_samples` programs for `task` and collapses exact
/// duplicates. Ids follow generation order and are never renumbered, so
/// they may skip after a collapse.
pub fn sample_candidates<B: ScoringBackend + ?Sized>(
    backend: &B,
    task: &Task,
    cfg: &SamplingConfig,
) -> Result<CandidatePool, GenerationError> {
    if cfg.num_samples == 0 {
        return Err(GenerationError::Backend(BackendError::InvalidRequest(
            "num_samples must be >= 1".into(),
        )));
    }
    let req = GenRequest {
        prompt_text: format!("{}{}", task.coder_prompt(), task.prompt_scaffold),
        sampling_temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
        stop_markers: vec![prompts::CODE_FENCE.to_string()],
    };
    let samples = match backend.generate(&req, cfg.num_samples) {
        Ok(s) => s,
        Err(BackendError::EmptyCompletion { requested, empty }) => {
            return Err(GenerationError::GenerationExhausted(format!(
                "{empty}/{requested} candidate samples for {} were empty",
                task.task_id
            )))
        }
        Err(e) => return Err(e.into()),
    };
    Ok(collapse_duplicates(
        samples
            .into_iter()
            .map(|s| format!("{}{}", task.prompt_scaffold, s)),
    ))
}

/// Assigns ids 1.. in order and keeps the first occurrence of each text.
pub fn collapse_duplicates(texts: impl IntoIterator<Item = String>) -> CandidatePool {
    let mut seen = std::collections::HashSet::new();
    let mut candidates = Vec::new();
    let mut duplicates_collapsed = 0;
    for (i, text) in texts.into_iter().enumerate() {
        if text.trim().is_empty() {
            continue;
        }
        if seen.insert(text.clone()) {
            candidates.push(Candidate::new(i as CandidateId + 1, text));
        } else {
            duplicates_collapsed += 1;
        }
    }
    CandidatePool {
        candidates,
        duplicates_collapsed,
    }
}

/// `log P(code | empty context)`: the candidate scored right after a bare
/// code-fence opener.
pub fn score_prior<B: ScoringBackend + ?Sized>(
    backend: &B,
    candidate: &Candidate,
) -> Result<f64, BackendError> {
    let req = ScoreRequest::new(prompts::PRIOR_PROMPT, candidate.code_text.clone())?;
    Ok(backend.score_continuation(&req)?.total_logprob)
}

/// `log P(code | instruction)` under the coder prompt.
pub fn score_under_instruction<B: ScoringBackend + ?Sized>(
    backend: &B,
    instruction: &str,
    candidate: &Candidate,
) -> Result<f64, BackendError> {
    let req = ScoreRequest::new(prompts::coder_prompt(instruction), candidate.code_text.clone())?;
    Ok(backend.score_continuation(&req)?.total_logprob)
}

/// `log P(instruction | code)` under the reviewer prompt.
pub fn score_reviewer<B: ScoringBackend + ?Sized>(
    backend: &B,
    instruction: &str,
    candidate: &Candidate,
) -> Result<f64, BackendError> {
    let req = ScoreRequest::new(prompts::reviewer_prompt(&candidate.code_text), instruction.trim().to_string())?;
    Ok(backend.score_continuation(&req)?.total_logprob)
}
