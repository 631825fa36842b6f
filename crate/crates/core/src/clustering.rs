//! Grouping instructions into meaning-equivalence clusters.
//!
//! Every unordered pair of instructions is judged once by the model; the
//! positive judgments form the edges of a graph whose connected components
//! are the clusters. The cluster containing the original instruction is the
//! main cluster.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, DiskCache, GenRequest, ScoringBackend};
use crate::instructions::Instruction;
use crate::prompts;
use crate::InstructionId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClusterError {
    #[error("no judgment for instruction pair ({0}, {1})")]
    IncompleteJudgments(InstructionId, InstructionId),
    #[error("judgment references unknown instruction {0}")]
    UnknownInstruction(InstructionId),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairJudgment {
    /// Always the smaller id of the pair.
    pub instruction_a: InstructionId,
    pub instruction_b: InstructionId,
    pub equivalent: bool,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: u32,
    pub member_ids: BTreeSet<InstructionId>,
    pub is_main: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPartition {
    pub clusters: Vec<Cluster>,
    pub main_cluster_id: u32,
}

impl ClusterPartition {
    /// Builds a partition from member groups. Clusters are ordered by their
    /// smallest member and numbered from 0, so the main cluster (which holds
    /// instruction 0) is always cluster 0.
    pub fn from_groups(
        groups: impl IntoIterator<Item = BTreeSet<InstructionId>>,
    ) -> Result<Self, ClusterError> {
        let mut groups: Vec<BTreeSet<InstructionId>> = groups.into_iter().collect();
        if groups.iter().any(|g| g.is_empty()) {
            return Err(ClusterError::InvalidPartition("empty cluster".into()));
        }
        let total: usize = groups.iter().map(|g| g.len()).sum();
        let union: BTreeSet<InstructionId> = groups.iter().flatten().copied().collect();
        if union.len() != total {
            return Err(ClusterError::InvalidPartition("clusters overlap".into()));
        }
        if !union.contains(&0) {
            return Err(ClusterError::InvalidPartition(
                "original instruction is not in any cluster".into(),
            ));
        }
        groups.sort_by_key(|g| *g.iter().next().expect("non-empty"));
        let clusters = groups
            .into_iter()
            .enumerate()
            .map(|(k, member_ids)| Cluster {
                cluster_id: k as u32,
                is_main: member_ids.contains(&0),
                member_ids,
            })
            .collect();
        Ok(Self {
            clusters,
            main_cluster_id: 0,
        })
    }

    /// Every instruction in its own cluster.
    pub fn singletons(ids: &[InstructionId]) -> Self {
        Self::from_groups(ids.iter().map(|&i| BTreeSet::from([i])))
            .expect("distinct ids including 0 form a valid partition")
    }

    pub fn main(&self) -> &Cluster {
        self.clusters
            .iter()
            .find(|c| c.cluster_id == self.main_cluster_id)
            .expect("main cluster exists")
    }

    pub fn cluster_of(&self, id: InstructionId) -> Option<u32> {
        self.clusters
            .iter()
            .find(|c| c.member_ids.contains(&id))
            .map(|c| c.cluster_id)
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Member lists in cluster order, for reports.
    pub fn member_lists(&self) -> Vec<Vec<InstructionId>> {
        self.clusters
            .iter()
            .map(|c| c.member_ids.iter().copied().collect())
            .collect()
    }

    /// Checks that the partition covers exactly `ids`, with disjoint
    /// non-empty clusters and a correctly flagged main cluster.
    pub fn validate(&self, ids: &[InstructionId]) -> Result<(), ClusterError> {
        let expected: BTreeSet<InstructionId> = ids.iter().copied().collect();
        let mut seen = BTreeSet::new();
        for c in &self.clusters {
            if c.member_ids.is_empty() {
                return Err(ClusterError::InvalidPartition(format!("cluster {} is empty", c.cluster_id)));
            }
            if c.is_main != c.member_ids.contains(&0) {
                return Err(ClusterError::InvalidPartition(format!(
                    "cluster {} main flag is wrong",
                    c.cluster_id
                )));
            }
            for &m in &c.member_ids {
                if !seen.insert(m) {
                    return Err(ClusterError::InvalidPartition(format!("instruction {m} appears twice")));
                }
            }
        }
        if seen != expected {
            return Err(ClusterError::InvalidPartition("partition does not cover the instruction set".into()));
        }
        if self.main().member_ids.contains(&0) {
            Ok(())
        } else {
            Err(ClusterError::InvalidPartition("main cluster lacks instruction 0".into()))
        }
    }
}

/// Disjoint-set forest with path compression and union by rank.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] += 1;
        }
        true
    }
}

/// Connected components of the positive-judgment graph.
///
/// Requires a judgment for every unordered pair of `instructions`; extra
/// judgments about instructions outside the set are ignored, which lets a
/// caller pass the full judgment list for a subset of instructions.
pub fn build_partition(
    instructions: &[Instruction],
    judgments: &[PairJudgment],
) -> Result<ClusterPartition, ClusterError> {
    let ids: Vec<InstructionId> = instructions.iter().map(|i| i.instruction_id).collect();
    let index: BTreeMap<InstructionId, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    if !index.contains_key(&0) {
        return Err(ClusterError::InvalidPartition("instruction 0 missing".into()));
    }

    let mut verdicts: BTreeMap<(InstructionId, InstructionId), bool> = BTreeMap::new();
    for j in judgments {
        let key = (j.instruction_a.min(j.instruction_b), j.instruction_a.max(j.instruction_b));
        if index.contains_key(&key.0) && index.contains_key(&key.1) {
            verdicts.insert(key, j.equivalent);
        }
    }

    let mut uf = UnionFind::new(ids.len());
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    for (x, &a) in sorted.iter().enumerate() {
        for &b in &sorted[x + 1..] {
            match verdicts.get(&(a, b)) {
                Some(true) => {
                    uf.union(index[&a], index[&b]);
                }
                Some(false) => {}
                None => return Err(ClusterError::IncompleteJudgments(a, b)),
            }
        }
    }

    let mut groups: BTreeMap<usize, BTreeSet<InstructionId>> = BTreeMap::new();
    for (k, &id) in ids.iter().enumerate() {
        groups.entry(uf.find(k)).or_default().insert(id);
    }
    ClusterPartition::from_groups(groups.into_values())
}

/// Reads a yes/no verdict from the model's reply. `None` when the reply
/// does not start with a recognizable answer.
pub fn parse_verdict(raw: &str) -> Option<bool> {
    let first = raw
        .split(|c: char| c.is_whitespace() || c == '.' || c == ',' || c == ':' || c == '!')
        .find(|w| !w.is_empty())?
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_ascii_lowercase();
    match first.as_str() {
        "yes" | "true" | "equivalent" | "same" => Some(true),
        "no" | "false" | "not" | "different" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CachedVerdict {
    raw_response: String,
    equivalent: bool,
    timestamp: u64,
}

/// Issues pairwise equivalence questions, with an optional disk cache keyed
/// by (model, hash of text a, hash of text b).
pub struct EquivalenceJudge<'a, B: ScoringBackend + ?Sized> {
    backend: &'a B,
    cache: Option<Arc<DiskCache>>,
    max_tokens: u32,
}

impl<'a, B: ScoringBackend + ?Sized> EquivalenceJudge<'a, B> {
    pub const NAMESPACE: &'static str = "judge";

    pub fn new(backend: &'a B) -> Self {
        Self {
            backend,
            cache: None,
            max_tokens: 8,
        }
    }

    pub fn with_cache(mut self, cache: Arc<DiskCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    fn key(&self, a: &str, b: &str) -> String {
        DiskCache::key(&[
            self.backend.model_name(),
            &DiskCache::text_hash(a),
            &DiskCache::text_hash(b),
        ])
    }

    fn ask(&self, a: &str, b: &str) -> Result<CachedVerdict, BackendError> {
        let req = GenRequest {
            prompt_text: prompts::equivalence_prompt(a, b),
            sampling_temperature: 0.0,
            max_tokens: self.max_tokens,
            stop_markers: vec!["\n".into()],
        };
        let raw = match self.backend.generate(&req, 1) {
            Ok(mut v) => v.remove(0),
            Err(BackendError::EmptyCompletion { .. }) => String::new(),
            Err(e) => return Err(e),
        };
        let equivalent = match parse_verdict(&raw) {
            Some(v) => v,
            None => {
                tracing::warn!(response = %raw, "unparseable equivalence verdict, treating as not equivalent");
                false
            }
        };
        Ok(CachedVerdict {
            raw_response: raw,
            equivalent,
            timestamp: crate::backend::unix_now(),
        })
    }

    /// Judges one pair; `a` must have the smaller id.
    pub fn judge_pair(&self, a: &Instruction, b: &Instruction) -> Result<PairJudgment, BackendError> {
        if a.instruction_id >= b.instruction_id {
            return Err(BackendError::InvalidRequest(format!(
                "pair ({}, {}) is not ordered",
                a.instruction_id, b.instruction_id
            )));
        }
        let verdict = match &self.cache {
            Some(cache) => {
                let key = self.key(&a.text, &b.text);
                let v = cache.get_or_try_insert_with(Self::NAMESPACE, &key, || self.ask(&a.text, &b.text))?;
                if let Ok(Some(rev)) = cache.get::<CachedVerdict>(Self::NAMESPACE, &self.key(&b.text, &a.text)) {
                    if rev.equivalent != v.equivalent {
                        tracing::warn!(
                            a = a.instruction_id,
                            b = b.instruction_id,
                            "cached reverse-order judgment disagrees"
                        );
                    }
                }
                v
            }
            None => self.ask(&a.text, &b.text)?,
        };
        Ok(PairJudgment {
            instruction_a: a.instruction_id,
            instruction_b: b.instruction_id,
            equivalent: verdict.equivalent,
            raw_response: verdict.raw_response,
        })
    }

    /// Judges every unordered pair, in (a, b) id order.
    pub fn judge_all(&self, instructions: &[Instruction]) -> Result<Vec<PairJudgment>, BackendError>
    where
        B: Sync,
    {
        let mut sorted: Vec<&Instruction> = instructions.iter().collect();
        sorted.sort_by_key(|i| i.instruction_id);
        let pairs: Vec<(&Instruction, &Instruction)> = sorted
            .iter()
            .enumerate()
            .flat_map(|(x, a)| sorted[x + 1..].iter().map(move |b| (*a, *b)))
            .collect();
        pairs
            .par_iter()
            .map(|(a, b)| self.judge_pair(a, b))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use proptest::prelude::*;

    fn instr(ids: &[u32]) -> Vec<Instruction> {
        ids.iter()
            .map(|&i| Instruction {
                instruction_id: i,
                text: format!("instruction {i}"),
                source_candidate_id: if i == 0 { None } else { Some(i) },
            })
            .collect()
    }

    fn judgments(n: u32, edges: &[(u32, u32)]) -> Vec<PairJudgment> {
        let mut out = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                out.push(PairJudgment {
                    instruction_a: a,
                    instruction_b: b,
                    equivalent: edges.contains(&(a, b)) || edges.contains(&(b, a)),
                    raw_response: String::new(),
                });
            }
        }
        out
    }

    #[test]
    fn chain_merges_transitively() {
        // A=0, B=1, C=2, D=3
        let p = build_partition(&instr(&[0, 1, 2, 3]), &judgments(4, &[(0, 1), (1, 2)])).unwrap();
        assert_eq!(p.member_lists(), vec![vec![0, 1, 2], vec![3]]);
        assert!(p.main().is_main);
        p.validate(&[0, 1, 2, 3]).unwrap();
    }

    #[test]
    fn missing_pair_is_reported() {
        let mut js = judgments(3, &[]);
        js.retain(|j| (j.instruction_a, j.instruction_b) != (1, 2));
        assert_eq!(
            build_partition(&instr(&[0, 1, 2]), &js),
            Err(ClusterError::IncompleteJudgments(1, 2))
        );
    }

    #[test]
    fn no_edges_means_singletons() {
        let p = build_partition(&instr(&[0, 1, 2, 3, 4]), &judgments(5, &[])).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(p, ClusterPartition::singletons(&[0, 1, 2, 3, 4]));
    }

    #[test]
    fn partition_validation_catches_errors() {
        assert!(ClusterPartition::from_groups([BTreeSet::from([1])]).is_err());
        assert!(ClusterPartition::from_groups([BTreeSet::from([0, 1]), BTreeSet::from([1])]).is_err());
        let p = ClusterPartition::singletons(&[0, 1]);
        assert!(p.validate(&[0, 1, 2]).is_err());
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict(" Yes"), Some(true));
        assert_eq!(parse_verdict("yes, they match"), Some(true));
        assert_eq!(parse_verdict("No."), Some(false));
        assert_eq!(parse_verdict("**No**"), Some(false));
        assert_eq!(parse_verdict("Maybe"), None);
        assert_eq!(parse_verdict(""), None);
    }

    fn judge_backend() -> MockBackend {
        MockBackend::builder()
            .script(
                prompts::equivalence_prompt(
                    "return the sum of a list of integers",
                    "compute the total of all integers in a list",
                ),
                [" Yes"],
            )
            .script(
                prompts::equivalence_prompt(
                    "return the sum of a list of integers",
                    "return the product of a list of integers",
                ),
                [" No"],
            )
            .gen_fallback(|prompt, _| {
                let (a, b) = prompts::parse_equivalence_prompt(prompt)?;
                Some(if a == b { " Yes".into() } else { " hmm".into() })
            })
            .build()
    }

    fn text(id: u32, t: &str) -> Instruction {
        Instruction {
            instruction_id: id,
            text: t.into(),
            source_candidate_id: if id == 0 { None } else { Some(id) },
        }
    }

    #[test]
    fn judge_table_examples() {
        let m = judge_backend();
        let judge = EquivalenceJudge::new(&m);
        let sum = text(0, "return the sum of a list of integers");
        let total = text(1, "compute the total of all integers in a list");
        let product = text(2, "return the product of a list of integers");
        assert!(judge.judge_pair(&sum, &total).unwrap().equivalent);
        assert!(!judge.judge_pair(&sum, &product).unwrap().equivalent);
        // identical text is judged equivalent by the mock
        assert!(judge.judge_pair(&sum, &text(3, &sum.text)).unwrap().equivalent);
        // unparseable replies are conservative
        let j = judge.judge_pair(&total, &product).unwrap();
        assert!(!j.equivalent);
        assert_eq!(j.raw_response, " hmm");
        assert!(judge.judge_pair(&product, &sum).is_err());
    }

    #[test]
    fn judge_cache_avoids_repeat_calls() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(DiskCache::open(dir.path()).unwrap());
        let m = judge_backend();
        let judge = EquivalenceJudge::new(&m).with_cache(cache);
        let all = vec![
            text(0, "return the sum of a list of integers"),
            text(1, "compute the total of all integers in a list"),
            text(2, "return the product of a list of integers"),
        ];
        let first = judge.judge_all(&all).unwrap();
        let calls = m.gen_calls();
        assert_eq!(calls, 3);
        let second = judge.judge_all(&all).unwrap();
        assert_eq!(first, second);
        assert_eq!(m.gen_calls(), calls);
        let p = build_partition(&all, &first).unwrap();
        assert_eq!(p.member_lists(), vec![vec![0, 1], vec![2]]);
    }

    fn closure_oracle(n: usize, adj: &[Vec<bool>]) -> Vec<Vec<bool>> {
        // reachability by repeated boolean matrix squaring
        let mut r: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..n).map(|j| i == j || adj[i][j] || adj[j][i]).collect())
            .collect();
        loop {
            let next: Vec<Vec<bool>> = (0..n)
                .map(|i| (0..n).map(|j| (0..n).any(|k| r[i][k] && r[k][j])).collect())
                .collect();
            if next == r {
                return r;
            }
            r = next;
        }
    }

    proptest! {
        #[test]
        #[allow(clippy::needless_range_loop)]
        fn components_match_transitive_closure(n in 1usize..=12, bits in prop::collection::vec(any::<bool>(), 66)) {
            let mut adj = vec![vec![false; n]; n];
            let mut edges = Vec::new();
            let mut k = 0;
            for a in 0..n {
                for b in a + 1..n {
                    if bits[k % bits.len()] && (k * 7 + a) % 3 == 0 {
                        adj[a][b] = true;
                        edges.push((a as u32, b as u32));
                    }
                    k += 1;
                }
            }
            let ids: Vec<u32> = (0..n as u32).collect();
            let p = build_partition(&instr(&ids), &judgments(n as u32, &edges)).unwrap();
            let reach = closure_oracle(n, &adj);
            for a in 0..n {
                for b in 0..n {
                    prop_assert_eq!(p.cluster_of(a as u32) == p.cluster_of(b as u32), reach[a][b]);
                }
            }
            p.validate(&ids).unwrap();
        }

        #[test]
        fn judgment_order_does_not_matter(seed in any::<u64>(), n in 2u32..8) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let edges: Vec<(u32, u32)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                .filter(|(a, b)| (seed >> ((a * 8 + b) % 64)) & 1 == 1).collect();
            let mut js = judgments(n, &edges);
            let ids: Vec<u32> = (0..n).collect();
            let base = build_partition(&instr(&ids), &js).unwrap();
            js.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(build_partition(&instr(&ids), &js).unwrap(), base);
        }

        #[test]
        fn extra_edge_never_adds_clusters(seed in any::<u64>(), n in 2u32..9, a in 0u32..9, b in 0u32..9) {
            prop_assume!(a < n && b < n && a != b);
            let mut edges: Vec<(u32, u32)> = (0..n).flat_map(|x| (x + 1..n).map(move |y| (x, y)))
                .filter(|(x, y)| (seed >> ((x * 8 + y) % 64)) & 1 == 1).collect();
            let ids: Vec<u32> = (0..n).collect();
            let before = build_partition(&instr(&ids), &judgments(n, &edges)).unwrap().len();
            edges.push((a.min(b), a.max(b)));
            let after = build_partition(&instr(&ids), &judgments(n, &edges)).unwrap().len();
            prop_assert!(after <= before);
        }
    }
}
