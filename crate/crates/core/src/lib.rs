//! Pragmatic reranking of LLM-sampled code candidates.
//!
//! Given a pool of sampled programs for one instruction, the crate scores
//! every (instruction, program) pair with a text model, synthesizes
//! alternative instructions from the programs themselves, clusters those
//! instructions by meaning, and selects the program whose pragmatic speaker
//! distribution puts the most mass on the cluster of the original
//! instruction. The Coder and CoderReviewer likelihood baselines are computed
//! from the same scores.
//!
//! Module map:
//!
//! - [`backend`]: scoring / sampling interface, HTTP client, mock, disk cache
//! - [`prompts`]: the versioned prompt templates
//! - [`generation`]: candidate sampling, deduplication and prior scoring
//! - [`instructions`]: alternative instruction synthesis
//! - [`clustering`]: pairwise equivalence judging and connected components
//! - [`rsa`]: the reranking math (pure functions)
//! - [`harness`]: datasets, pipeline orchestration, execution, reports, sweeps
//! - [`fixtures`]: scripted mock worlds used by tests, examples and the CLI demo

pub mod backend;
pub mod clustering;
pub mod fixtures;
pub mod generation;
pub mod harness;
pub mod instructions;
pub mod prompts;
pub mod rsa;

/// 1-based candidate index in generation order.
pub type CandidateId = u32;
/// Instruction index; 0 is always the original instruction.
pub type InstructionId = u32;

pub use backend::{
    BackendConfig, BackendError, CachedBackend, DiskCache, GenRequest, HttpBackend, MockBackend,
    ScoreRequest, ScoreResult, ScoringBackend,
};
pub use clustering::{build_partition, Cluster, ClusterPartition, EquivalenceJudge, PairJudgment};
pub use generation::{Candidate, Task};
pub use instructions::Instruction;
pub use rsa::{CalibrationParams, Method, RerankResult, ScoreMatrix};
