//! Accuracy as a function of alpha, reusing stored scores.

use pragmatic_rerank::fixtures::mock_suite;
use pragmatic_rerank::harness::sweep::write_alpha_csv;
use pragmatic_rerank::harness::{sweep_alpha, Pipeline};

fn main() {
    let suite = mock_suite();
    let records = Pipeline::new(&suite.backend, suite.config.clone())
        .with_executor(&suite.executor)
        .run_tasks(suite.tasks.clone());
    let calls = suite.backend.score_calls();
    let rows = sweep_alpha(&records, &[0.0, 0.25, 0.5, 1.0, 2.0, 4.0]).unwrap();
    write_alpha_csv(&rows, std::io::stdout()).unwrap();
    assert_eq!(calls, suite.backend.score_calls(), "sweeping never rescoring");
}
