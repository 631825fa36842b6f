//! Accuracy against the number of candidates, by repeated subsampling of
//! a scored pool.

use pragmatic_rerank::fixtures::mock_suite;
use pragmatic_rerank::harness::sweep::write_n_csv;
use pragmatic_rerank::harness::{sweep_n, Pipeline, SweepSpec};

fn main() {
    let suite = mock_suite();
    let records = Pipeline::new(&suite.backend, suite.config.clone())
        .with_executor(&suite.executor)
        .run_tasks(suite.tasks.clone());
    let spec = SweepSpec {
        alpha_values: vec![],
        n_values: vec![1, 2, 4, 6, 8, 10],
        repeats: 8,
        seed: 7,
    };
    let rows = sweep_n(&records, &spec, 1.0).unwrap();
    write_n_csv(&rows, std::io::stdout()).unwrap();
}
