//! The whole pipeline over the scripted five-task suite, then the report.

use pragmatic_rerank::fixtures::mock_suite;
use pragmatic_rerank::harness::{Pipeline, RunReport};

fn main() {
    let suite = mock_suite();
    let mut cfg = suite.config.clone();
    cfg.workers = 4;
    let records = Pipeline::new(&suite.backend, cfg.clone())
        .with_executor(&suite.executor)
        .run_tasks(suite.tasks.clone());
    for rec in &records {
        let n = rec.instructions.as_ref().map_or(0, |s| s.instructions.len());
        let k = rec.partition.as_ref().map_or(0, |p| p.len());
        println!("{}: {} candidates, {n} instructions, {k} clusters", rec.task.task_id, rec.candidates.len());
    }
    let report = RunReport::build(&records, cfg.alpha, cfg.sampling.num_samples);
    print!("{}", report.summary());
    println!("backend calls: {} score, {} generate", suite.backend.score_calls(), suite.backend.gen_calls());
}
