//! Benchmark harness: datasets, the per-task pipeline, execution, reports
//! and sweeps.

pub mod dataset;
pub mod exec;
pub mod jsonl;
pub mod pipeline;
pub mod report;
pub mod sweep;

pub use dataset::{load_dataset, parse_dataset, DatasetError, DatasetFormat};
pub use exec::{ErrorKind, ExecRequest, ExecResult, Executor, MockExecutor, RunnerClient, RunnerPool};
pub use jsonl::{read_jsonl, write_jsonl, JsonlError};
pub use pipeline::{Pipeline, PipelineConfig, Stage, TaskRecord, TaskStatus};
pub use report::{compute_accuracy, pass_at_k, solved_subset, ReportError, RunReport};
pub use sweep::{sweep_alpha, sweep_n, AlphaRow, NRow, SweepSpec};
