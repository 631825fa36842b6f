//! Calibration and candidate-count sweeps over finished records.
//!
//! Sweeps never touch a backend: they rerun the reranker on the stored score
//! matrices and judgments.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::build_partition;
use crate::harness::pipeline::TaskRecord;
use crate::rsa::{self, CalibrationParams, Method};
use crate::CandidateId;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error("task {task}: {message}")]
    Task { task: String, message: String },
    #[error("no evaluated task to sweep over")]
    EmptyEvaluation,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub alpha_values: Vec<f64>,
    pub n_values: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.alpha_values.is_empty() && self.n_values.is_empty() {
            return Err(SweepError::InvalidSpec("no values to sweep".into()));
        }
        if let Some(a) = self.alpha_values.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(SweepError::InvalidSpec(format!("alpha {a}")));
        }
        if self.n_values.contains(&0) {
            return Err(SweepError::InvalidSpec("n must be >= 1".into()));
        }
        if self.repeats == 0 {
            return Err(SweepError::InvalidSpec("repeats must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub accuracy: BTreeMap<Method, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NRow {
    pub n: usize,
    pub repeats: usize,
    pub mean: BTreeMap<Method, f64>,
    /// Population standard deviation across repeats.
    pub std: BTreeMap<Method, f64>,
}

fn task_err(rec: &TaskRecord, e: impl std::fmt::Display) -> SweepError {
    SweepError::Task {
        task: rec.task.task_id.clone(),
        message: e.to_string(),
    }
}

/// Records that can be swept: finished, scored, partitioned and executed.
fn usable(records: &[TaskRecord]) -> Vec<&TaskRecord> {
    records
        .iter()
        .filter(|r| r.is_ok() && r.score_matrix.is_some() && r.partition.is_some() && !r.executions.is_empty())
        .collect()
}

fn methods_of(rec: &TaskRecord) -> Vec<Method> {
    let has_reviewer = rec.score_matrix.as_ref().is_some_and(|s| s.reviewer_log.is_some());
    Method::ALL
        .into_iter()
        .filter(|m| *m != Method::CoderReviewer || has_reviewer)
        .collect()
}

fn accuracy(hits: &BTreeMap<Method, (usize, usize)>) -> BTreeMap<Method, f64> {
    hits.iter()
        .map(|(m, (ok, total))| (*m, *ok as f64 / *total as f64))
        .collect()
}

/// Accuracy per method for each alpha.
pub fn sweep_alpha(records: &[TaskRecord], alphas: &[f64]) -> Result<Vec<AlphaRow>, SweepError> {
    if alphas.is_empty() {
        return Err(SweepError::InvalidSpec("no alpha values".into()));
    }
    let recs = usable(records);
    if recs.is_empty() {
        return Err(SweepError::EmptyEvaluation);
    }
    alphas
        .iter()
        .map(|&alpha| {
            let params = CalibrationParams::new(alpha).map_err(|e| SweepError::InvalidSpec(e.to_string()))?;
            let mut hits: BTreeMap<Method, (usize, usize)> = BTreeMap::new();
            for rec in &recs {
                let sm = rec.score_matrix.as_ref().expect("usable");
                let part = rec.partition.as_ref().expect("usable");
                for m in methods_of(rec) {
                    let r = rsa::rerank(m, sm, part, params).map_err(|e| task_err(rec, e))?;
                    let h = hits.entry(m).or_default();
                    h.0 += usize::from(rec.passed(r.selected_id) == Some(true));
                    h.1 += 1;
                }
            }
            Ok(AlphaRow {
                alpha,
                accuracy: accuracy(&hits),
            })
        })
        .collect()
}

/// Seed for one (n, repeat, task) draw.
fn draw_seed(seed: u64, n: usize, repeat: usize, task: usize) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for part in [seed, n as u64, repeat as u64, task as u64] {
        h.update(part.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Positions of the candidates drawn for one subsample, ascending.
pub fn subsample_rows(pool: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample(&mut rng, pool, n.min(pool)).into_vec();
    rows.sort_unstable();
    rows
}

/// Selection per method when only the candidates at `rows` had been
/// sampled: instructions written from other candidates are dropped and the
/// clusters are rebuilt from the stored judgments.
pub fn rerank_subsample(
    rec: &TaskRecord,
    rows: &[usize],
    params: CalibrationParams,
) -> Result<BTreeMap<Method, CandidateId>, SweepError> {
    let sm = rec.score_matrix.as_ref().ok_or_else(|| task_err(rec, "no score matrix"))?;
    let set = rec.instructions.as_ref().ok_or_else(|| task_err(rec, "no instruction set"))?;
    let kept: BTreeSet<CandidateId> = rows.iter().map(|&r| sm.candidate_ids[r]).collect();
    let instructions: Vec<_> = set
        .instructions
        .iter()
        .filter(|i| i.source_candidate_id.is_none_or(|c| kept.contains(&c)))
        .cloned()
        .collect();
    let cols: Vec<usize> = instructions
        .iter()
        .map(|i| {
            sm.instruction_ids
                .iter()
                .position(|&x| x == i.instruction_id)
                .ok_or_else(|| task_err(rec, format!("instruction {} has no column", i.instruction_id)))
        })
        .collect::<Result<_, _>>()?;
    let sub = sm.select(rows, &cols).map_err(|e| task_err(rec, e))?;
    let part = build_partition(&instructions, &rec.judgments).map_err(|e| task_err(rec, e))?;
    methods_of(rec)
        .into_iter()
        .map(|m| {
            rsa::rerank(m, &sub, &part, params)
                .map(|r| (m, r.selected_id))
                .map_err(|e| task_err(rec, e))
        })
        .collect()
}

/// Mean and population std of accuracy over `repeats` random subsamples of
/// each pool, for each n. Pools smaller than n are used whole.
pub fn sweep_n(records: &[TaskRecord], spec: &SweepSpec, alpha: f64) -> Result<Vec<NRow>, SweepError> {
    spec.validate()?;
    if spec.n_values.is_empty() {
        return Err(SweepError::InvalidSpec("no n values".into()));
    }
    let params = CalibrationParams::new(alpha).map_err(|e| SweepError::InvalidSpec(e.to_string()))?;
    let recs = usable(records);
    if recs.is_empty() {
        return Err(SweepError::EmptyEvaluation);
    }
    let mut rows = Vec::with_capacity(spec.n_values.len());
    for &n in &spec.n_values {
        // (correct, evaluated) per repeat; kept as integers so equal
        // repeats give an exact mean and a zero std
        let mut per_repeat: BTreeMap<Method, Vec<(usize, usize)>> = BTreeMap::new();
        for repeat in 0..spec.repeats {
            let mut hits: BTreeMap<Method, (usize, usize)> = BTreeMap::new();
            for (t, rec) in recs.iter().enumerate() {
                let pool = rec.score_matrix.as_ref().expect("usable").num_candidates();
                let sample = subsample_rows(pool, n, draw_seed(spec.seed, n, repeat, t));
                for (m, id) in rerank_subsample(rec, &sample, params)? {
                    let h = hits.entry(m).or_default();
                    h.0 += usize::from(rec.passed(id) == Some(true));
                    h.1 += 1;
                }
            }
            for (m, h) in hits {
                per_repeat.entry(m).or_default().push(h);
            }
        }
        let (mut mean, mut std) = (BTreeMap::new(), BTreeMap::new());
        for (m, xs) in per_repeat {
            let (mu, sd) = mean_std(&xs);
            mean.insert(m, mu);
            std.insert(m, sd);
        }
        rows.push(NRow {
            n,
            repeats: spec.repeats,
            mean,
            std,
        });
    }
    Ok(rows)
}

/// Mean and population std of `correct / evaluated` over repeats.
fn mean_std(xs: &[(usize, usize)]) -> (f64, f64) {
    let r = xs.len() as f64;
    let accs: Vec<f64> = xs.iter().map(|&(c, e)| c as f64 / e as f64).collect();
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return (accs[0], 0.0);
    }
    let mu = accs.iter().sum::<f64>() / r;
    let var = accs.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / r;
    (mu, var.sqrt())
}

/// One row per alpha, one column per method.
pub fn write_alpha_csv<W: io::Write>(rows: &[AlphaRow], out: W) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["alpha".to_string()];
    header.extend(Method::ALL.iter().map(|m| m.as_str().to_string()));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.alpha.to_string()];
        rec.extend(Method::ALL.iter().map(|m| r.accuracy.get(m).map(f64::to_string).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One row per n with `<method>_mean` and `<method>_std` columns.
pub fn write_n_csv<W: io::Write>(rows: &[NRow], out: W) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["n".to_string(), "repeats".to_string()];
    for m in Method::ALL {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.n.to_string(), r.repeats.to_string()];
        for m in Method::ALL {
            rec.push(r.mean.get(&m).map(f64::to_string).unwrap_or_default());
            rec.push(r.std.get(&m).map(f64::to_string).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
