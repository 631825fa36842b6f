//! Run reports and accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::pipeline::{TaskRecord, TaskStatus};
use crate::rsa::Method;
use crate::{CandidateId, InstructionId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReportError {
    #[error("no task was evaluated")]
    EmptyEvaluation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub candidate_id: CandidateId,
    /// `None` when the candidate was not executed.
    pub passed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: String,
    pub status: TaskStatus,
    pub num_candidates: usize,
    pub num_instructions: usize,
    pub selections: BTreeMap<Method, Selection>,
    /// `(candidate_id, passed)` for every executed candidate.
    pub candidate_passes: Vec<(CandidateId, bool)>,
    /// Instruction ids per cluster, main cluster first.
    pub clusters: Vec<Vec<InstructionId>>,
}

impl TaskReport {
    pub fn from_record(rec: &TaskRecord) -> Self {
        let selections = rec
            .results
            .iter()
            .map(|r| {
                (
                    r.method,
                    Selection {
                        candidate_id: r.selected_id,
                        passed: rec.passed(r.selected_id),
                    },
                )
            })
            .collect();
        Self {
            task_id: rec.task.task_id.clone(),
            status: rec.status.clone(),
            num_candidates: rec.candidates.len(),
            num_instructions: rec.instructions.as_ref().map_or(0, |s| s.instructions.len()),
            selections,
            candidate_passes: rec
                .executions
                .iter()
                .map(|e| (e.candidate_id, e.result.passed))
                .collect(),
            clusters: rec.partition.as_ref().map(|p| p.member_lists()).unwrap_or_default(),
        }
    }

    /// Evaluated means: not skipped, and every method's selection has a
    /// pass/fail verdict.
    pub fn is_evaluated(&self) -> bool {
        self.status == TaskStatus::Ok
            && !self.selections.is_empty()
            && self.selections.values().all(|s| s.passed.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub correct: usize,
    pub evaluated: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub alpha: f64,
    pub num_samples: usize,
    pub tasks: Vec<TaskReport>,
    pub evaluated: usize,
    pub skipped: usize,
    pub accuracy: BTreeMap<Method, MethodSummary>,
    /// Wall-clock timing; left out unless requested so reports stay
    /// byte-stable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl RunReport {
    pub fn build(records: &[TaskRecord], alpha: f64, num_samples: usize) -> Self {
        let tasks: Vec<TaskReport> = records.iter().map(TaskReport::from_record).collect();
        let skipped = tasks.iter().filter(|t| t.status != TaskStatus::Ok).count();
        let mut report = Self {
            alpha,
            num_samples,
            evaluated: tasks.iter().filter(|t| t.is_evaluated()).count(),
            skipped,
            tasks,
            accuracy: BTreeMap::new(),
            timing: None,
        };
        report.accuracy = summarize(&report.tasks);
        report
    }

    pub fn with_timing(mut self, wall: std::time::Duration) -> Self {
        self.timing = Some(Timing {
            wall_ms: wall.as_millis() as u64,
        });
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Short human-readable table.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "tasks: {}  evaluated: {}  skipped: {}  alpha: {}  n: {}",
            self.tasks.len(),
            self.evaluated,
            self.skipped,
            self.alpha,
            self.num_samples
        );
        for (m, s) in &self.accuracy {
            let _ = writeln!(
                out,
                "{:<24} {:>4}/{:<4} {:6.2}%",
                m.as_str(),
                s.correct,
                s.evaluated,
                100.0 * s.accuracy
            );
        }
        out
    }
}

fn summarize(tasks: &[TaskReport]) -> BTreeMap<Method, MethodSummary> {
    let evaluated: Vec<&TaskReport> = tasks.iter().filter(|t| t.is_evaluated()).collect();
    let mut out = BTreeMap::new();
    for m in Method::ALL {
        let with: Vec<&&TaskReport> = evaluated.iter().filter(|t| t.selections.contains_key(&m)).collect();
        if with.is_empty() {
            continue;
        }
        let correct = with.iter().filter(|t| t.selections[&m].passed == Some(true)).count();
        out.insert(
            m,
            MethodSummary {
                correct,
                evaluated: with.len(),
                accuracy: correct as f64 / with.len() as f64,
            },
        );
    }
    out
}

/// Fraction of evaluated tasks whose selection passed, per method.
pub fn compute_accuracy(report: &RunReport) -> Result<BTreeMap<Method, f64>, ReportError> {
    if report.evaluated == 0 || report.accuracy.is_empty() {
        return Err(ReportError::EmptyEvaluation);
    }
    Ok(report.accuracy.iter().map(|(m, s)| (*m, s.accuracy)).collect())
}

/// Unbiased pass@k estimate from `n` samples of which `c` passed.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> f64 {
    assert!(k >= 1 && k <= n && c <= n, "pass_at_k({n}, {c}, {k})");
    if n - c < k {
        return 1.0;
    }
    // 1 - C(n-c, k) / C(n, k), as a running product
    1.0 - ((n - c + 1)..=n).fold(1.0, |acc, i| acc * (1.0 - k as f64 / i as f64))
}

/// Tasks that the first sample fails but one of the first `k` samples
/// solves ("unsolved at pass@1, solved at pass@k").
pub fn is_hard_but_solvable(rec: &TaskRecord, k: usize) -> bool {
    if !rec.is_ok() || rec.executions.is_empty() {
        return false;
    }
    let first = rec.candidates.iter().map(|c| c.candidate_id).min();
    let Some(first) = first else { return false };
    if first != 1 || rec.passed(first) != Some(false) {
        return false;
    }
    rec.executions
        .iter()
        .any(|e| e.candidate_id as usize <= k && e.result.passed)
}

pub fn solved_subset(records: &[TaskRecord], k: usize) -> Vec<TaskRecord> {
    records.iter().filter(|r| is_hard_but_solvable(r, k)).cloned().collect()
}
