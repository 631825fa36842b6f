//! A disk cache in front of a backend: the second pass is free.

use std::sync::Arc;

use pragmatic_rerank::{CachedBackend, DiskCache, MockBackend, ScoreRequest, ScoringBackend};

fn main() {
    let dir = std::env::temp_dir().join(format!("rerank-cache-demo-{}", std::process::id()));
    let cache = Arc::new(DiskCache::open(&dir).unwrap());
    let backend = CachedBackend::new(MockBackend::builder()
        .score_fallback(|_, cont| Some(vec![-0.05 * cont.len() as f64]))
        .build(), cache);
    let reqs: Vec<ScoreRequest> = (0..5)
        .map(|k| ScoreRequest::new("# add one\n", format!("def f(x):\n    return x + {k}\n")).unwrap())
        .collect();
    for pass in 1..=2 {
        let total: f64 = reqs.iter().map(|r| backend.score_continuation(r).unwrap().total_logprob).sum();
        println!("pass {pass}: sum {total:.4}, upstream calls so far {}", backend.inner().score_calls());
    }
    std::fs::remove_dir_all(dir).ok();
}
