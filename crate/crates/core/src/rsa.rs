//! Pragmatic reranking math.
//!
//! Everything in this module is a pure function of a [`ScoreMatrix`] (and, for
//! the clustered variant, a [`ClusterPartition`]). No model is ever called
//! here, so reranking can be replayed for any number of calibration values
//! once the scores have been collected.
//!
//! The pipeline for the pragmatic methods is:
//!
//! 1. **Literal listener.** `l0_log[c][i] = log P(c | i)` as scored by the model.
//! 2. **Cluster aggregation.** The column for the cluster that contains the
//!    original instruction is copied verbatim from the original-instruction
//!    column; every other cluster takes the arithmetic mean of its members in
//!    probability space.
//! 3. **Temperature calibration.** Each candidate's empty-context log prior is
//!    standardized within the task (`z`), and its temperature is
//!    `tau = exp(-alpha * z)`.
//! 4. **Pragmatic speaker.** For each candidate, a softmax over clusters of
//!    `agg_log / tau`.
//! 5. **Pragmatic listener.** Candidates are ranked by their speaker
//!    probability on the main cluster.
//!
//! All quantities stay in natural-log space; exponentiation only happens
//! after a max shift inside [`log_sum_exp`].

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterPartition;
use crate::{CandidateId, InstructionId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RsaError {
    #[error("score matrix shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite score at candidate row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("cluster {0} is empty")]
    EmptyCluster(u32),
    #[error("partition does not match the matrix columns: {0}")]
    PartitionMismatch(String),
    #[error("reviewer scores are required for the coder-reviewer method")]
    MissingReviewerScores,
    #[error("unknown candidate id {0}")]
    UnknownCandidate(CandidateId),
    #[error("calibration alpha must be finite and >= 0, got {0}")]
    InvalidAlpha(f64),
    #[error("temperature for candidate row {row} must be finite and > 0, got {tau}")]
    InvalidTemperature { row: usize, tau: f64 },
}

/// Literal-listener scores for one task.
///
/// Rows are candidates (in `candidate_ids` order), columns are instructions
/// (in `instruction_ids` order). Column 0 is always the original
/// instruction, id 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub candidate_ids: Vec<CandidateId>,
    pub instruction_ids: Vec<InstructionId>,
    /// `l0_log[row][col] = log P(candidate | instruction)`.
    pub l0_log: Vec<Vec<f64>>,
    /// Empty-context log prior per candidate row.
    pub prior_log: Vec<f64>,
    /// `log P(original instruction | candidate)`; only needed for the
    /// coder-reviewer baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewer_log: Option<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(
        candidate_ids: Vec<CandidateId>,
        instruction_ids: Vec<InstructionId>,
        l0_log: Vec<Vec<f64>>,
        prior_log: Vec<f64>,
        reviewer_log: Option<Vec<f64>>,
    ) -> Result<Self, RsaError> {
        let sm = Self {
            candidate_ids,
            instruction_ids,
            l0_log,
            prior_log,
            reviewer_log,
        };
        sm.validate()?;
        Ok(sm)
    }

    pub fn num_candidates(&self) -> usize {
        self.candidate_ids.len()
    }

    pub fn num_instructions(&self) -> usize {
        self.instruction_ids.len()
    }

    /// Checks shapes, finiteness and the column-0 convention.
    pub fn validate(&self) -> Result<(), RsaError> {
        let rows = self.candidate_ids.len();
        let cols = self.instruction_ids.len();
        if rows == 0 {
            return Err(RsaError::Shape("no candidates".into()));
        }
        if cols == 0 || self.instruction_ids[0] != 0 {
            return Err(RsaError::Shape(
                "column 0 must hold the original instruction (id 0)".into(),
            ));
        }
        let mut seen = self.instruction_ids.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != cols {
            return Err(RsaError::Shape("duplicate instruction ids".into()));
        }
        let mut seen = self.candidate_ids.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != rows {
            return Err(RsaError::Shape("duplicate candidate ids".into()));
        }
        if self.l0_log.len() != rows || self.prior_log.len() != rows {
            return Err(RsaError::Shape(format!(
                "expected {rows} rows, got l0 {} / prior {}",
                self.l0_log.len(),
                self.prior_log.len()
            )));
        }
        for (row, values) in self.l0_log.iter().enumerate() {
            if values.len() != cols {
                return Err(RsaError::Shape(format!(
                    "row {row} has {} columns, expected {cols}",
                    values.len()
                )));
            }
            if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                return Err(RsaError::NonFinite { row, col });
            }
        }
        if let Some(row) = self.prior_log.iter().position(|v| !v.is_finite()) {
            return Err(RsaError::NonFinite { row, col: usize::MAX });
        }
        if let Some(reviewer) = &self.reviewer_log {
            if reviewer.len() != rows {
                return Err(RsaError::Shape("reviewer vector length".into()));
            }
            if let Some(row) = reviewer.iter().position(|v| !v.is_finite()) {
                return Err(RsaError::NonFinite { row, col: usize::MAX });
            }
        }
        Ok(())
    }

    /// Restricts the matrix to the given candidate rows and instruction
    /// columns (both by position). Column 0 must be kept.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Result<Self, RsaError> {
        if cols.first() != Some(&0) {
            return Err(RsaError::Shape("selection must keep column 0 first".into()));
        }
        let pick_row = |v: &Vec<f64>| cols.iter().map(|&c| v[c]).collect::<Vec<_>>();
        Self::new(
            rows.iter().map(|&r| self.candidate_ids[r]).collect(),
            cols.iter().map(|&c| self.instruction_ids[c]).collect(),
            rows.iter().map(|&r| pick_row(&self.l0_log[r])).collect(),
            rows.iter().map(|&r| self.prior_log[r]).collect(),
            self.reviewer_log
                .as_ref()
                .map(|rev| rows.iter().map(|&r| rev[r]).collect()),
        )
    }

    fn row_of(&self, id: CandidateId) -> Result<usize, RsaError> {
        self.candidate_ids
            .iter()
            .position(|&c| c == id)
            .ok_or(RsaError::UnknownCandidate(id))
    }
}

/// Literal-listener scores aggregated per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterScores {
    pub candidate_ids: Vec<CandidateId>,
    pub cluster_ids: Vec<u32>,
    /// Column index (into `cluster_ids`) of the main cluster.
    pub main_column: usize,
    /// `agg_log[row][k] = log P(candidate | cluster k)`.
    pub agg_log: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub alpha: f64,
}

impl CalibrationParams {
    pub fn new(alpha: f64) -> Result<Self, RsaError> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(RsaError::InvalidAlpha(alpha));
        }
        Ok(Self { alpha })
    }
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Coder,
    CoderReviewer,
    CodeRsa,
    CodeRsaNoClustering,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Coder,
        Method::CoderReviewer,
        Method::CodeRsa,
        Method::CodeRsaNoClustering,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Coder => "coder",
            Method::CoderReviewer => "coder_reviewer",
            Method::CodeRsa => "code_rsa",
            Method::CodeRsaNoClustering => "code_rsa_no_clustering",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Output of one reranking method.
///
/// `scores[k]` is the score of `ranking[k]`; scores are non-increasing, and
/// equal scores are ordered by ascending candidate id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankResult {
    pub method: Method,
    pub ranking: Vec<CandidateId>,
    pub scores: Vec<f64>,
    pub selected_id: CandidateId,
}

impl RerankResult {
    /// Sorts `(id, score)` pairs descending by score, ascending id on ties.
    pub fn from_scores(method: Method, ids: &[CandidateId], scores: &[f64]) -> Self {
        debug_assert_eq!(ids.len(), scores.len());
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
            Ordering::Equal => ids[a].cmp(&ids[b]),
            other => other,
        });
        let ranking: Vec<CandidateId> = order.iter().map(|&i| ids[i]).collect();
        Self {
            method,
            selected_id: ranking[0],
            scores: order.iter().map(|&i| scores[i]).collect(),
            ranking,
        }
    }

    pub fn score_of(&self, id: CandidateId) -> Option<f64> {
        self.ranking
            .iter()
            .position(|&c| c == id)
            .map(|pos| self.scores[pos])
    }
}

/// Max-shifted `log(sum(exp(values)))`. Returns `-inf` for an empty slice or
/// when every value is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Softmax of `values`, normalized via [`log_sum_exp`].
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| (v - lse).exp()).collect()
}

/// Aggregates instruction columns into cluster columns.
pub fn aggregate_clusters(
    sm: &ScoreMatrix,
    part: &ClusterPartition,
) -> Result<ClusterScores, RsaError> {
    let column_of = |id: InstructionId| {
        sm.instruction_ids
            .iter()
            .position(|&i| i == id)
            .ok_or_else(|| RsaError::PartitionMismatch(format!("instruction {id} has no column")))
    };

    let covered: usize = part.clusters.iter().map(|c| c.member_ids.len()).sum();
    if covered != sm.num_instructions() {
        return Err(RsaError::PartitionMismatch(format!(
            "partition covers {covered} instructions, matrix has {}",
            sm.num_instructions()
        )));
    }

    let mut cluster_columns = Vec::with_capacity(part.clusters.len());
    let mut main_column = None;
    for (k, cluster) in part.clusters.iter().enumerate() {
        if cluster.member_ids.is_empty() {
            return Err(RsaError::EmptyCluster(cluster.cluster_id));
        }
        let cols = cluster
            .member_ids
            .iter()
            .map(|&id| column_of(id))
            .collect::<Result<Vec<_>, _>>()?;
        if cluster.member_ids.contains(&0) {
            if main_column.is_some() {
                return Err(RsaError::PartitionMismatch(
                    "instruction 0 in more than one cluster".into(),
                ));
            }
            main_column = Some(k);
        }
        cluster_columns.push(cols);
    }
    let main_column = main_column.ok_or_else(|| {
        RsaError::PartitionMismatch("no cluster contains the original instruction".into())
    })?;

    let agg_log = sm
        .l0_log
        .iter()
        .map(|row| {
            cluster_columns
                .iter()
                .enumerate()
                .map(|(k, cols)| {
                    if k == main_column {
                        row[0]
                    } else {
                        let members: Vec<f64> = cols.iter().map(|&c| row[c]).collect();
                        log_sum_exp(&members) - (members.len() as f64).ln()
                    }
                })
                .collect()
        })
        .collect();

    Ok(ClusterScores {
        candidate_ids: sm.candidate_ids.clone(),
        cluster_ids: part.clusters.iter().map(|c| c.cluster_id).collect(),
        main_column,
        agg_log,
    })
}

/// Within-task standardized log priors (population standard deviation).
/// A pool whose priors are all equal gets `z = 0` everywhere.
pub fn standardize(prior_log: &[f64]) -> Vec<f64> {
    let n = prior_log.len();
    if n == 0 {
        return Vec::new();
    }
    let (min, max) = prior_log
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if min == max {
        return vec![0.0; n];
    }
    let mean = prior_log.iter().sum::<f64>() / n as f64;
    let var = prior_log.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return vec![0.0; n];
    }
    prior_log.iter().map(|v| (v - mean) / std).collect()
}

/// `tau_c = exp(-alpha * z_c)`.
pub fn calibrate_temperatures(prior_log: &[f64], alpha: f64) -> Vec<f64> {
    standardize(prior_log)
        .into_iter()
        .map(|z| (-alpha * z).exp())
        .collect()
}

/// Speaker distribution over clusters for one aggregated row at temperature
/// `tau`.
pub fn speaker_row(agg_row: &[f64], tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = agg_row.iter().map(|v| v / tau).collect();
    softmax(&scaled)
}

/// The temperature-free speaker: a plain softmax of the literal-listener row.
pub fn unscaled_speaker_row(agg_row: &[f64]) -> Vec<f64> {
    softmax(agg_row)
}

/// Speaker distribution over clusters for candidate `id`.
pub fn speaker_distribution(
    cs: &ClusterScores,
    tau: &[f64],
    id: CandidateId,
) -> Result<Vec<f64>, RsaError> {
    let row = cs
        .candidate_ids
        .iter()
        .position(|&c| c == id)
        .ok_or(RsaError::UnknownCandidate(id))?;
    let t = tau.get(row).copied().unwrap_or(f64::NAN);
    if !(t.is_finite() && t > 0.0) {
        return Err(RsaError::InvalidTemperature { row, tau: t });
    }
    Ok(speaker_row(&cs.agg_log[row], t))
}

/// Full speaker table for a task, kept around for reports and debugging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTable {
    pub candidate_ids: Vec<CandidateId>,
    pub cluster_ids: Vec<u32>,
    pub main_column: usize,
    pub z: Vec<f64>,
    pub tau: Vec<f64>,
    /// `probs[row][k] = P_S1(cluster k | candidate; tau)`.
    pub probs: Vec<Vec<f64>>,
}

impl SpeakerTable {
    pub fn main_scores(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p[self.main_column]).collect()
    }
}

pub fn speaker_table(
    sm: &ScoreMatrix,
    part: &ClusterPartition,
    params: CalibrationParams,
) -> Result<SpeakerTable, RsaError> {
    let params = CalibrationParams::new(params.alpha)?;
    sm.validate()?;
    let cs = aggregate_clusters(sm, part)?;
    let z = standardize(&sm.prior_log);
    let tau: Vec<f64> = z.iter().map(|z| (-params.alpha * z).exp()).collect();
    let probs = cs
        .agg_log
        .iter()
        .zip(&tau)
        .map(|(row, &t)| speaker_row(row, t))
        .collect();
    Ok(SpeakerTable {
        candidate_ids: cs.candidate_ids,
        cluster_ids: cs.cluster_ids,
        main_column: cs.main_column,
        z,
        tau,
        probs,
    })
}

/// Ranks candidates by their calibrated speaker probability on the cluster
/// that contains the original instruction.
pub fn rerank_code_rsa(
    sm: &ScoreMatrix,
    part: &ClusterPartition,
    params: CalibrationParams,
) -> Result<RerankResult, RsaError> {
    let table = speaker_table(sm, part, params)?;
    Ok(RerankResult::from_scores(
        Method::CodeRsa,
        &sm.candidate_ids,
        &table.main_scores(),
    ))
}

/// [`rerank_code_rsa`] with every instruction in its own cluster.
pub fn rerank_code_rsa_no_clustering(
    sm: &ScoreMatrix,
    params: CalibrationParams,
) -> Result<RerankResult, RsaError> {
    let part = ClusterPartition::singletons(&sm.instruction_ids);
    let mut result = rerank_code_rsa(sm, &part, params)?;
    result.method = Method::CodeRsaNoClustering;
    Ok(result)
}

/// Ranks by `log P(candidate | original instruction)` alone.
pub fn rerank_coder(sm: &ScoreMatrix) -> RerankResult {
    let scores: Vec<f64> = sm.l0_log.iter().map(|row| row[0]).collect();
    RerankResult::from_scores(Method::Coder, &sm.candidate_ids, &scores)
}

/// Ranks by `log P(candidate | instruction) + log P(instruction | candidate)`.
pub fn rerank_coder_reviewer(sm: &ScoreMatrix) -> Result<RerankResult, RsaError> {
    let reviewer = sm
        .reviewer_log
        .as_ref()
        .ok_or(RsaError::MissingReviewerScores)?;
    let scores: Vec<f64> = sm
        .l0_log
        .iter()
        .zip(reviewer)
        .map(|(row, r)| row[0] + r)
        .collect();
    Ok(RerankResult::from_scores(
        Method::CoderReviewer,
        &sm.candidate_ids,
        &scores,
    ))
}

/// Runs one method.
pub fn rerank(
    method: Method,
    sm: &ScoreMatrix,
    part: &ClusterPartition,
    params: CalibrationParams,
) -> Result<RerankResult, RsaError> {
    match method {
        Method::Coder => Ok(rerank_coder(sm)),
        Method::CoderReviewer => rerank_coder_reviewer(sm),
        Method::CodeRsa => rerank_code_rsa(sm, part, params),
        Method::CodeRsaNoClustering => rerank_code_rsa_no_clustering(sm, params),
    }
}

/// Looks up the speaker distribution for `id` without building a full table.
pub fn candidate_speaker(
    sm: &ScoreMatrix,
    part: &ClusterPartition,
    params: CalibrationParams,
    id: CandidateId,
) -> Result<Vec<f64>, RsaError> {
    sm.row_of(id)?;
    let cs = aggregate_clusters(sm, part)?;
    let tau = calibrate_temperatures(&sm.prior_log, params.alpha);
    speaker_distribution(&cs, &tau, id)
}
