//! Per-task orchestration.
//!
//! A task goes through: sample candidates, score them under the original
//! instruction and the empty context, synthesize instructions from the
//! candidates, score the remaining instruction columns, score reviewer
//! terms, judge instruction pairs, partition, rerank under every method and
//! finally (optionally) execute all candidates.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, DiskCache, ScoringBackend};
use crate::clustering::{build_partition, ClusterPartition, EquivalenceJudge, PairJudgment};
use crate::generation::{
    sample_candidates, score_prior, score_reviewer, score_under_instruction, Candidate, SamplingConfig, Task,
};
use crate::harness::exec::{ExecRequest, ExecResult, Executor};
use crate::instructions::{synthesize_instructions, InstructionSet, SynthesisConfig};
use crate::rsa::{self, CalibrationParams, Method, RerankResult, ScoreMatrix};
use crate::CandidateId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub sampling: SamplingConfig,
    pub synthesis: SynthesisConfig,
    pub alpha: f64,
    /// Score `log P(i0 | c)` for the coder-reviewer baseline.
    pub reviewer: bool,
    pub execute: bool,
    pub exec_timeout_s: f64,
    /// Tasks processed at once.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sampling: SamplingConfig::default(),
            synthesis: SynthesisConfig::default(),
            alpha: 1.0,
            reviewer: true,
            execute: true,
            exec_timeout_s: 10.0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sample,
    ScoreCoder,
    Synthesize,
    ScoreInstructions,
    ScoreReviewer,
    Judge,
    Partition,
    Rerank,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().expect("unit variant"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for StageError {}

fn at<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> StageError {
    move |e| StageError {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TaskStatus {
    Ok,
    Skipped { stage: Stage, error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateExecution {
    pub candidate_id: CandidateId,
    pub result: ExecResult,
}

/// Everything known about one task. Also the on-disk record format between
/// CLI steps, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: Task,
    pub status: TaskStatus,
    #[serde(default)]
    pub candidates: Vec<Candidate>,
    #[serde(default)]
    pub duplicates_collapsed: usize,
    #[serde(default)]
    pub instructions: Option<InstructionSet>,
    #[serde(default)]
    pub score_matrix: Option<ScoreMatrix>,
    #[serde(default)]
    pub judgments: Vec<PairJudgment>,
    #[serde(default)]
    pub partition: Option<ClusterPartition>,
    #[serde(default)]
    pub results: Vec<RerankResult>,
    #[serde(default)]
    pub executions: Vec<CandidateExecution>,
}

impl TaskRecord {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            status: TaskStatus::Ok,
            candidates: Vec::new(),
            duplicates_collapsed: 0,
            instructions: None,
            score_matrix: None,
            judgments: Vec::new(),
            partition: None,
            results: Vec::new(),
            executions: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == TaskStatus::Ok
    }

    pub fn skip(&mut self, err: StageError) {
        tracing::warn!(task = %self.task.task_id, stage = %err.stage, error = %err.message, "task skipped");
        self.status = TaskStatus::Skipped {
            stage: err.stage,
            error: err.message,
        };
    }

    pub fn result(&self, method: Method) -> Option<&RerankResult> {
        self.results.iter().find(|r| r.method == method)
    }

    pub fn passed(&self, id: CandidateId) -> Option<bool> {
        self.executions
            .iter()
            .find(|e| e.candidate_id == id)
            .map(|e| e.result.passed)
    }

    fn need<'r, T>(v: &'r Option<T>, stage: Stage, what: &str) -> Result<&'r T, StageError> {
        v.as_ref().ok_or_else(|| StageError {
            stage,
            message: format!("{what} missing; run the earlier steps first"),
        })
    }
}

/// Runs pipeline stages against one backend.
pub struct Pipeline<'a> {
    backend: &'a dyn ScoringBackend,
    executor: Option<&'a dyn Executor>,
    config: PipelineConfig,
    judge_cache: Option<Arc<DiskCache>>,
}

impl<'a> Pipeline<'a> {
    pub fn new(backend: &'a dyn ScoringBackend, config: PipelineConfig) -> Self {
        Self {
            backend,
            executor: None,
            config,
            judge_cache: None,
        }
    }

    pub fn with_executor(mut self, executor: &'a dyn Executor) -> Self {
        self.executor = Some(executor);
        self
    }

    pub fn with_judge_cache(mut self, cache: Arc<DiskCache>) -> Self {
        self.judge_cache = Some(cache);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn sample(&self, rec: &mut TaskRecord) -> Result<(), StageError> {
        let pool = sample_candidates(self.backend, &rec.task, &self.config.sampling).map_err(at(Stage::Sample))?;
        rec.candidates = pool.candidates;
        rec.duplicates_collapsed = pool.duplicates_collapsed;
        Ok(())
    }

    /// `log P(c | i0)` and `log P(c)` for every candidate.
    pub fn score_coder(&self, rec: &mut TaskRecord) -> Result<(), StageError> {
        let instruction = rec.task.instruction.clone();
        let scores: Vec<Result<(f64, f64), BackendError>> = rec
            .candidates
            .par_iter()
            .map(|c| {
                Ok((
                    score_under_instruction(self.backend, &instruction, c)?,
                    score_prior(self.backend, c)?,
                ))
            })
            .collect();
        for (c, s) in rec.candidates.iter_mut().zip(scores) {
            let (coder, prior) = s.map_err(at(Stage::ScoreCoder))?;
            c.coder_logprob = Some(coder);
            c.prior_logprob = Some(prior);
        }
        Ok(())
    }

    pub fn synthesize(&self, rec: &mut TaskRecord) -> Result<(), StageError> {
        let set = synthesize_instructions(self.backend, &rec.task.instruction, &rec.candidates, &self.config.synthesis)
            .map_err(at(Stage::Synthesize))?;
        rec.instructions = Some(set);
        Ok(())
    }

    /// Fills the instruction columns other than the original and assembles
    /// the score matrix.
    pub fn score_instructions(&self, rec: &mut TaskRecord) -> Result<(), StageError> {
        let stage = Stage::ScoreInstructions;
        if rec.candidates.iter().any(|c| c.coder_logprob.is_none() || c.prior_logprob.is_none()) {
            self.score_coder(rec)?;
        }
        let set = TaskRecord::need(&rec.instructions, stage, "instruction set")?;
        let others = &set.instructions[1..];
        let pairs: Vec<(usize, usize)> = (0..rec.candidates.len())
            .flat_map(|r| (0..others.len()).map(move |k| (r, k)))
            .collect();
        let values: Vec<f64> = pairs
            .par_iter()
            .map(|&(r, k)| score_under_instruction(self.backend, &others[k].text, &rec.candidates[r]))
            .collect::<Result<_, _>>()
            .map_err(at(stage))?;
        let width = others.len();
        let l0_log = rec
            .candidates
            .iter()
            .enumerate()
            .map(|(r, c)| {
                let mut row = Vec::with_capacity(width + 1);
                row.push(c.coder_logprob.expect("scored above"));
                row.extend_from_slice(&values[r * width..(r + 1) * width]);
                row
            })
            .collect();
        let sm = ScoreMatrix::new(
            rec.candidates.iter().map(|c| c.candidate_id).collect(),
            set.instructions.iter().map(|i| i.instruction_id).collect(),
            l0_log,
            rec.candidates.iter().map(|c| c.prior_logprob.expect("scored above")).collect(),
            None,
        )
        .map_err(at(stage))?;
        rec.score_matrix = Some(sm);
        Ok(())
    }

    /// `log P(i0 | c)` for every candidate.
    pub fn score_reviewer(&self, rec: &mut TaskRecord) -> Result<(), StageError> {
        let instruction = rec.task.instruction.clone();
        let reviewer: Vec<f64> = rec
            .candidates
            .par_iter()
            .map(|c| score_reviewer(self.backend, &instruction, c))
            .collect::<Result<_, _>>()
            .map_err(at(Stage::ScoreReviewer))?;
        let sm = rec
            .score_matrix
            .as_mut()
            .ok_or_else(|| at::<&str>(Stage::ScoreReviewer)("score matrix missing"))?;
        sm.reviewer_log = Some(reviewer);
        sm.validate().map_err(at(Stage::ScoreReviewer))?;
        Ok(())
    }

    pub fn judge(&self, rec: &mut TaskRecord) -> Result<(), StageError> {
        let set = TaskRecord::need(&rec.instructions, Stage::Judge, "instruction set")?;
        let mut judge = EquivalenceJudge::new(self.backend);
        if let Some(cache) = &self.judge_cache {
            judge = judge.with_cache(cache.clone());
        }
        rec.judgments = judge.judge_all(&set.instructions).map_err(at(Stage::Judge))?;
        Ok(())
    }

    pub fn partition(&self, rec: &mut TaskRecord) -> Result<(), StageError> {
        let set = TaskRecord::need(&rec.instructions, Stage::Partition, "instruction set")?;
        rec.partition = Some(build_partition(&set.instructions, &rec.judgments).map_err(at(Stage::Partition))?);
        Ok(())
    }

    pub fn rerank(&self, rec: &mut TaskRecord) -> Result<(), StageError> {
        rerank_record(rec, self.config.alpha)
    }

    /// Executes every candidate, not just the selections.
    pub fn evaluate(&self, rec: &mut TaskRecord) -> Result<(), StageError> {
        let Some(executor) = self.executor else {
            return Ok(());
        };
        let task = &rec.task;
        let timeout_s = self.config.exec_timeout_s;
        let outcomes: Vec<CandidateExecution> = rec
            .candidates
            .par_iter()
            .map(|c| {
                let req = ExecRequest {
                    code_text: c.code_text.clone(),
                    test_text: task.tests.clone(),
                    entry_point: task.entry_point.clone(),
                    timeout_s,
                };
                executor.evaluate(&req).map(|result| CandidateExecution {
                    candidate_id: c.candidate_id,
                    result,
                })
            })
            .collect::<Result<_, _>>()
            .map_err(at(Stage::Evaluate))?;
        rec.executions = outcomes;
        Ok(())
    }

    /// All stages in order. Errors mark the task skipped; the partial record
    /// is still returned.
    pub fn run_task(&self, task: Task) -> TaskRecord {
        let mut rec = TaskRecord::new(task);
        if let Err(e) = self.run_stages(&mut rec) {
            rec.skip(e);
        }
        rec
    }

    fn run_stages(&self, rec: &mut TaskRecord) -> Result<(), StageError> {
        self.sample(rec)?;
        self.score_coder(rec)?;
        self.synthesize(rec)?;
        self.score_instructions(rec)?;
        if self.config.reviewer {
            self.score_reviewer(rec)?;
        }
        self.judge(rec)?;
        self.partition(rec)?;
        self.rerank(rec)?;
        if self.config.execute {
            self.evaluate(rec)?;
        }
        Ok(())
    }

    /// Runs tasks on `config.workers` threads. Records come back in input
    /// order whatever the worker count.
    pub fn run_tasks(&self, tasks: Vec<Task>) -> Vec<TaskRecord> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers.max(1))
            .build()
            .expect("thread pool");
        pool.install(|| tasks.into_par_iter().map(|t| self.run_task(t)).collect())
    }
    /// Applies one stage to every record that is still ok, on
    /// `config.workers` threads. A failing record is marked skipped.
    pub fn run_stage<F>(&self, records: &mut [TaskRecord], stage: F)
    where
        F: Fn(&Self, &mut TaskRecord) -> Result<(), StageError> + Sync,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers.max(1))
            .build()
            .expect("thread pool");
        pool.install(|| {
            records.par_iter_mut().filter(|r| r.is_ok()).for_each(|rec| {
                if let Err(e) = stage(self, rec) {
                    rec.skip(e);
                }
            })
        });
    }
}

/// Reranks a scored, partitioned record under every available method and
/// stores each candidate's z-score and temperature.
pub fn rerank_record(rec: &mut TaskRecord, alpha: f64) -> Result<(), StageError> {
    let stage = Stage::Rerank;
    let params = CalibrationParams::new(alpha).map_err(at(stage))?;
    let sm = TaskRecord::need(&rec.score_matrix, stage, "score matrix")?;
    let part = TaskRecord::need(&rec.partition, stage, "partition")?;
    let mut results = Vec::with_capacity(Method::ALL.len());
    for method in Method::ALL {
        if method == Method::CoderReviewer && sm.reviewer_log.is_none() {
            continue;
        }
        results.push(rsa::rerank(method, sm, part, params).map_err(at(stage))?);
    }
    let z = rsa::standardize(&sm.prior_log);
    let tau = rsa::calibrate_temperatures(&sm.prior_log, params.alpha);
    for (row, id) in sm.candidate_ids.iter().enumerate() {
        if let Some(c) = rec.candidates.iter_mut().find(|c| c.candidate_id == *id) {
            c.z_score = Some(z[row]);
            c.tau = Some(tau[row]);
        }
    }
    rec.results = results;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::harness::exec::MockExecutor;

    fn tiny() -> (MockBackend, Task) {
        let task = Task {
            task_id: "tiny".into(),
            instruction: "Return the sum of a list.".into(),
            prompt_scaffold: String::new(),
            entry_point: "f".into(),
            tests: "assert f([1, 2]) == 3".into(),
        };
        let m = MockBackend::builder()
            .script(task.coder_prompt(), ["def f(xs):\n    return sum(xs)\n", "def f(xs):\n    return 0\n"])
            .gen_fallback(|prompt, _| {
                if crate::prompts::parse_instruction_prompt(prompt).is_some() {
                    Some("Do something with a list.".into())
                } else {
                    Some(" No".into())
                }
            })
            .score_fallback(|p, c| Some(crate::backend::synthetic_token_logprobs(p, c)))
            .build();
        (m, task)
    }

    fn cfg() -> PipelineConfig {
        PipelineConfig {
            sampling: SamplingConfig {
                num_samples: 2,
                ..SamplingConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn full_run_fills_every_field() {
        let (m, task) = tiny();
        let ex = MockExecutor::passing(["def f(xs):\n    return sum(xs)\n"]);
        let p = Pipeline::new(&m, cfg()).with_executor(&ex);
        let rec = p.run_task(task);
        assert!(rec.is_ok(), "{:?}", rec.status);
        assert_eq!(rec.candidates.len(), 2);
        // one generated instruction survives, the other is a duplicate
        assert_eq!(rec.instructions.as_ref().unwrap().instructions.len(), 2);
        assert_eq!(rec.judgments.len(), 1);
        assert_eq!(rec.results.len(), 4);
        assert_eq!(rec.executions.len(), 2);
        assert!(rec.candidates.iter().all(|c| c.tau.is_some()));
    }

    #[test]
    fn backend_failure_skips_the_task() {
        let (_, task) = tiny();
        let m = MockBackend::builder().build();
        let rec = Pipeline::new(&m, cfg()).run_task(task);
        assert!(matches!(rec.status, TaskStatus::Skipped { stage: Stage::Sample, .. }));
    }

    #[test]
    fn records_round_trip_through_json() {
        let (m, task) = tiny();
        let rec = Pipeline::new(&m, cfg()).run_task(task);
        let line = serde_json::to_string(&rec).unwrap();
        let back: TaskRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn stages_need_their_inputs() {
        let (m, task) = tiny();
        let p = Pipeline::new(&m, cfg());
        let mut rec = TaskRecord::new(task);
        assert_eq!(p.rerank(&mut rec).unwrap_err().stage, Stage::Rerank);
        assert_eq!(p.judge(&mut rec).unwrap_err().stage, Stage::Judge);
    }
}
