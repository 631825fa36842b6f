//! Alternative instructions written back from the candidates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, GenRequest, ScoringBackend};
use crate::generation::Candidate;
use crate::prompts;
use crate::{CandidateId, InstructionId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub instruction_id: InstructionId,
    pub text: String,
    /// Candidate the instruction was written from; `None` only for the
    /// original instruction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_candidate_id: Option<CandidateId>,
}

impl Instruction {
    pub fn original(text: impl Into<String>) -> Self {
        Self {
            instruction_id: 0,
            text: text.into(),
            source_candidate_id: None,
        }
    }

    pub fn is_original(&self) -> bool {
        self.instruction_id == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub per_candidate: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            per_candidate: 1,
            temperature: 0.7,
            max_tokens: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionSet {
    pub instructions: Vec<Instruction>,
    /// Generated texts that normalized to the original instruction.
    pub dropped_as_original: usize,
    /// Generated texts that normalized to an earlier generated instruction.
    pub dropped_as_duplicate: usize,
    /// Candidates whose generations all came back empty.
    pub exhausted_candidates: Vec<CandidateId>,
}

/// Whitespace-only normalization used for duplicate detection: trim and
/// collapse runs of whitespace to one space.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Extracts the instruction from a raw generation: everything before the end
/// marker or the first blank line, whichever comes first.
pub fn clean_generation(raw: &str) -> String {
    let marker_cut = prompts::INSTRUCTION_END_MARKERS
        .iter()
        .filter_map(|m| raw.find(m))
        .min()
        .unwrap_or(raw.len());
    let text = raw[..marker_cut].trim_start();
    let para_end = paragraph_end(text);
    text[..para_end].trim().to_string()
}

fn paragraph_end(text: &str) -> usize {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim().is_empty() && offset > 0 {
            return offset;
        }
        offset += line.len();
    }
    text.len()
}

pub fn render_instruction_prompt(candidate: &Candidate) -> String {
    prompts::instruction_prompt(&candidate.code_text)
}

/// Builds the instruction set for a pool: the original instruction (id 0)
/// followed by up to `per_candidate` generated instructions per candidate.
///
/// Generated instruction ids follow generation order
/// (`candidate_index * per_candidate + sample + 1`) and are not renumbered
/// after duplicates are dropped.
pub fn synthesize_instructions<B: ScoringBackend + ?Sized>(
    backend: &B,
    original: &str,
    candidates: &[Candidate],
    cfg: &SynthesisConfig,
) -> Result<InstructionSet, BackendError> {
    if candidates.is_empty() {
        return Err(BackendError::InvalidRequest("empty candidate pool".into()));
    }
    if cfg.per_candidate == 0 {
        return Err(BackendError::InvalidRequest("per_candidate must be >= 1".into()));
    }
    let per_candidate: Vec<Result<Option<Vec<String>>, BackendError>> = candidates
        .par_iter()
        .map(|c| {
            let req = GenRequest {
                prompt_text: render_instruction_prompt(c),
                sampling_temperature: cfg.temperature,
                max_tokens: cfg.max_tokens,
                stop_markers: prompts::INSTRUCTION_END_MARKERS.iter().map(|s| s.to_string()).collect(),
            };
            match backend.generate(&req, cfg.per_candidate) {
                Ok(texts) => Ok(Some(texts)),
                Err(BackendError::EmptyCompletion { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut generated = Vec::with_capacity(candidates.len());
    let mut exhausted_candidates = Vec::new();
    for (c, r) in candidates.iter().zip(per_candidate) {
        match r? {
            Some(texts) => generated.push(texts),
            None => {
                tracing::warn!(candidate = c.candidate_id, "instruction generation exhausted");
                exhausted_candidates.push(c.candidate_id);
                generated.push(Vec::new());
            }
        }
    }
    Ok(assemble(original, candidates, &generated, cfg.per_candidate, exhausted_candidates))
}

/// Deterministic assembly from raw generations (`generated[k]` belongs to
/// `candidates[k]`).
pub fn assemble(
    original: &str,
    candidates: &[Candidate],
    generated: &[Vec<String>],
    per_candidate: usize,
    mut exhausted_candidates: Vec<CandidateId>,
) -> InstructionSet {
    let mut instructions = vec![Instruction::original(original)];
    let mut seen = std::collections::HashSet::new();
    seen.insert(normalize(original));
    let mut dropped_as_original = 0;
    let mut dropped_as_duplicate = 0;
    for (k, (candidate, texts)) in candidates.iter().zip(generated).enumerate() {
        let mut contributed = false;
        for (j, raw) in texts.iter().enumerate().take(per_candidate) {
            let text = clean_generation(raw);
            if text.is_empty() {
                continue;
            }
            let norm = normalize(&text);
            if norm == normalize(original) {
                dropped_as_original += 1;
                contributed = true;
                continue;
            }
            if !seen.insert(norm) {
                dropped_as_duplicate += 1;
                contributed = true;
                continue;
            }
            contributed = true;
            instructions.push(Instruction {
                instruction_id: (k * per_candidate + j + 1) as InstructionId,
                text,
                source_candidate_id: Some(candidate.candidate_id),
            });
        }
        if !contributed && !texts.is_empty() && !exhausted_candidates.contains(&candidate.candidate_id) {
            exhausted_candidates.push(candidate.candidate_id);
        }
    }
    InstructionSet {
        instructions,
        dropped_as_original,
        dropped_as_duplicate,
        exhausted_candidates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use proptest::prelude::*;

    fn pool(texts: &[&str]) -> Vec<Candidate> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Candidate::new(i as u32 + 1, *t))
            .collect()
    }

    #[test]
    fn duplicate_generations_keep_first() {
        let cands = pool(&["c1", "c2", "c3"]);
        let m = MockBackend::builder()
            .script(render_instruction_prompt(&cands[0]), ["X"])
            .script(render_instruction_prompt(&cands[1]), ["X\n### instruction end ###"])
            .script(render_instruction_prompt(&cands[2]), ["  Y  "])
            .build();
        let set = synthesize_instructions(&m, "orig", &cands, &SynthesisConfig::default()).unwrap();
        let got: Vec<_> = set
            .instructions
            .iter()
            .map(|i| (i.instruction_id, i.text.as_str(), i.source_candidate_id))
            .collect();
        assert_eq!(got, vec![(0, "orig", None), (1, "X", Some(1)), (3, "Y", Some(3))]);
        assert_eq!(set.dropped_as_duplicate, 1);
    }

    #[test]
    fn copy_of_original_is_dropped() {
        let cands = pool(&["c1", "c2"]);
        let m = MockBackend::builder()
            .script(render_instruction_prompt(&cands[0]), ["Sum   the list."])
            .script(render_instruction_prompt(&cands[1]), ["Multiply the list."])
            .build();
        let set = synthesize_instructions(&m, "Sum the list.", &cands, &SynthesisConfig::default()).unwrap();
        assert_eq!(set.instructions.len(), 2);
        assert_eq!(set.dropped_as_original, 1);
        assert!(set.instructions[0].is_original());
    }

    #[test]
    fn ten_candidates_give_at_most_eleven() {
        let cands: Vec<Candidate> = (1..=10).map(|i| Candidate::new(i, format!("code {i}"))).collect();
        let m = MockBackend::builder()
            .gen_fallback(|prompt, _| {
                let code = prompts::parse_instruction_prompt(prompt)?;
                Some(format!("Describe {code}.\n### instruction end ###"))
            })
            .build();
        let set = synthesize_instructions(&m, "orig", &cands, &SynthesisConfig::default()).unwrap();
        assert_eq!(set.instructions.len(), 11);
        for i in &set.instructions[1..] {
            assert!(cands.iter().any(|c| Some(c.candidate_id) == i.source_candidate_id));
        }
    }

    #[test]
    fn exhausted_candidate_is_recorded() {
        let cands = pool(&["c1", "c2"]);
        let m = MockBackend::builder()
            .script(render_instruction_prompt(&cands[0]), ["### instruction end ###"])
            .script(render_instruction_prompt(&cands[1]), ["Fine."])
            .build();
        let set = synthesize_instructions(&m, "orig", &cands, &SynthesisConfig::default()).unwrap();
        assert_eq!(set.exhausted_candidates, vec![1]);
        assert_eq!(set.instructions.len(), 2);
    }

    #[test]
    fn generation_is_cut_at_marker_or_blank_line() {
        assert_eq!(clean_generation("\nDo a thing.\n### instruction end ###\nmore"), "Do a thing.");
        assert_eq!(clean_generation("Line one\nline two\n\n### Function start ###\n"), "Line one\nline two");
        assert_eq!(clean_generation("Do it.###instruction end###"), "Do it.");
        assert_eq!(clean_generation("   "), "");
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "[ \\t\\na-z]{0,40}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once.clone());
            prop_assert!(!once.starts_with(' ') && !once.ends_with(' ') && !once.contains("  "));
        }
    }
}
