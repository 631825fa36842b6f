use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pragmatic_rerank::fixtures::mock_suite;
use pragmatic_rerank::harness::pipeline::rerank_record;
use pragmatic_rerank::harness::sweep::{write_alpha_csv, write_n_csv};
use pragmatic_rerank::harness::{
    load_dataset, read_jsonl, solved_subset, sweep_alpha, sweep_n, write_jsonl, DatasetFormat, Executor, Pipeline,
    PipelineConfig, RunReport, RunnerPool, SweepSpec, TaskRecord,
};
use pragmatic_rerank::{BackendConfig, CachedBackend, DiskCache, HttpBackend, ScoringBackend, Task};

type Result<T> = std::result::Result<T, Box<dyn std::error::Error + Send + Sync>>;

fn fail<T>(msg: impl Into<String>) -> Result<T> {
    Err(msg.into().into())
}

#[derive(Parser)]
#[command(name = "pragmatic-rerank", version, about = "Rerank sampled code candidates")]
struct Cli {
    #[command(flatten)]
    backend: BackendArgs,
    /// Tasks processed concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Log level filter (overridden by RUST_LOG).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    /// OpenAI-style completions server.
    Http,
    /// Built-in scripted backend over the demo tasks.
    Demo,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, global = true, value_enum, default_value = "http")]
    backend: BackendKind,
    #[arg(long, global = true, env = "RERANK_BASE_URL")]
    base_url: Option<String>,
    #[arg(long, global = true, env = "RERANK_MODEL")]
    model: Option<String>,
    #[arg(long, global = true, env = "RERANK_API_KEY", hide_env_values = true)]
    api_key: Option<String>,
    #[arg(long, global = true, default_value_t = 8)]
    max_concurrent: usize,
    #[arg(long, global = true, default_value_t = 60.0)]
    request_timeout_s: f64,
    /// Cache scores and judgments here; reruns then make no new requests.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct Io {
    /// Input records (JSON lines).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output records; defaults to overwriting the input.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Io {
    fn out(&self) -> &Path {
        self.out.as_deref().unwrap_or(&self.input)
    }
}

#[derive(Args)]
struct SamplingArgs {
    /// Candidates sampled per task.
    #[arg(short = 'n', long, default_value_t = 10)]
    num_samples: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 512)]
    max_tokens: u32,
    /// Alternative instructions per candidate.
    #[arg(short = 'm', long, default_value_t = 1)]
    per_candidate: usize,
    #[arg(long, default_value_t = 0.7)]
    instruction_temperature: f64,
    #[arg(long, default_value_t = 256)]
    instruction_max_tokens: u32,
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset file; the demo backend falls back to its own tasks.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "humaneval")]
    format: DatasetFormat,
    /// Only the first K tasks.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct ExecArgs {
    /// Runner command line, whitespace separated, or `demo`.
    #[arg(long, default_value = "python3 -m runner")]
    runner: String,
    /// Runner processes kept alive.
    #[arg(long, default_value_t = 4)]
    runner_processes: usize,
    #[arg(long, default_value_t = 10.0)]
    exec_timeout_s: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Sample candidates and synthesize alternative instructions.
    Generate {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill the score matrix, and the reviewer column unless disabled.
    Score {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        no_reviewer: bool,
    },
    /// Judge instruction pairs and build the cluster partition.
    Cluster {
        #[command(flatten)]
        io: Io,
    },
    /// Rank candidates under every method.
    Rerank {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
    },
    /// Execute every candidate against its task's tests.
    Evaluate {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// All stages, dataset to report.
    Run {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[command(flatten)]
        exec: ExecArgs,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long)]
        no_reviewer: bool,
        #[arg(long)]
        no_execute: bool,
        /// Where to write the records.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Accuracy per method as JSON.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Rerank at this alpha first instead of using stored rankings.
        #[arg(long)]
        alpha: Option<f64>,
        /// Restrict to tasks some but not all of the first K candidates pass.
        #[arg(long)]
        solved_k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy against alpha, as CSV.
    SweepAlpha {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1,2,4")]
        alphas: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy against candidate count by subsampling, as CSV.
    SweepN {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,6,8,10")]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Env {
    backend: Box<dyn ScoringBackend>,
    judge_cache: Option<Arc<DiskCache>>,
}

impl BackendArgs {
    fn open(&self) -> Result<Env> {
        let inner: Box<dyn ScoringBackend> = match self.backend {
            BackendKind::Demo => Box::new(mock_suite().backend),
            BackendKind::Http => {
                let (Some(url), Some(model)) = (&self.base_url, &self.model) else {
                    return fail("--base-url and --model (or RERANK_BASE_URL / RERANK_MODEL) are required");
                };
                let mut cfg = BackendConfig::new(url.as_str(), model.as_str());
                cfg.auth_token = self.api_key.clone();
                cfg.max_concurrent_requests = self.max_concurrent;
                cfg.request_timeout = Duration::from_secs_f64(self.request_timeout_s);
                Box::new(HttpBackend::new(cfg)?)
            }
        };
        Ok(match &self.cache_dir {
            Some(dir) => {
                let cache = Arc::new(DiskCache::open(dir)?);
                Env {
                    backend: Box::new(CachedBackend::new(inner, cache.clone())),
                    judge_cache: Some(cache),
                }
            }
            None => Env {
                backend: inner,
                judge_cache: None,
            },
        })
    }
}

impl Env {
    fn pipeline(&self, config: PipelineConfig) -> Pipeline<'_> {
        let p = Pipeline::new(self.backend.as_ref(), config);
        match &self.judge_cache {
            Some(c) => p.with_judge_cache(c.clone()),
            None => p,
        }
    }
}

impl SamplingArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        cfg.sampling.num_samples = self.num_samples;
        cfg.sampling.temperature = self.temperature;
        cfg.sampling.max_tokens = self.max_tokens;
        cfg.synthesis.per_candidate = self.per_candidate;
        cfg.synthesis.temperature = self.instruction_temperature;
        cfg.synthesis.max_tokens = self.instruction_max_tokens;
    }
}

impl DatasetArgs {
    fn tasks(&self, kind: BackendKind) -> Result<Vec<Task>> {
        let mut tasks = match (&self.dataset, kind) {
            (Some(p), _) => load_dataset(p, self.format)?,
            (None, BackendKind::Demo) => mock_suite().tasks,
            (None, BackendKind::Http) => return fail("--dataset is required"),
        };
        if let Some(k) = self.limit {
            tasks.truncate(k);
        }
        Ok(tasks)
    }
}

impl ExecArgs {
    fn executor(&self) -> Result<Box<dyn Executor>> {
        if self.runner == "demo" {
            return Ok(Box::new(mock_suite().executor));
        }
        let cmd: Vec<String> = self.runner.split_whitespace().map(String::from).collect();
        if cmd.is_empty() {
            return fail("empty --runner");
        }
        Ok(Box::new(RunnerPool::new(cmd, self.runner_processes)?))
    }
}

fn emit(out: Option<&Path>, text: &[u8]) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text)?,
    }
    Ok(())
}

fn log_skips(records: &[TaskRecord]) {
    let skipped = records.iter().filter(|r| !r.is_ok()).count();
    if skipped > 0 {
        eprintln!("{skipped} of {} tasks skipped", records.len());
    }
}

fn main() {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(&cli.log));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig {
        workers: cli.workers,
        ..PipelineConfig::default()
    };
    match cli.command {
        Command::Generate { dataset, sampling, out } => {
            let env = cli.backend.open()?;
            sampling.apply(&mut cfg);
            let mut records: Vec<TaskRecord> = dataset.tasks(cli.backend.backend)?.into_iter().map(TaskRecord::new).collect();
            let p = env.pipeline(cfg);
            p.run_stage(&mut records, Pipeline::sample);
            p.run_stage(&mut records, Pipeline::synthesize);
            log_skips(&records);
            write_jsonl(out, &records)?;
        }
        Command::Score { io, no_reviewer } => {
            let env = cli.backend.open()?;
            let mut records: Vec<TaskRecord> = read_jsonl(&io.input)?;
            let p = env.pipeline(cfg);
            p.run_stage(&mut records, Pipeline::score_coder);
            p.run_stage(&mut records, Pipeline::score_instructions);
            if !no_reviewer {
                p.run_stage(&mut records, Pipeline::score_reviewer);
            }
            log_skips(&records);
            write_jsonl(io.out(), &records)?;
        }
        Command::Cluster { io } => {
            let env = cli.backend.open()?;
            let mut records: Vec<TaskRecord> = read_jsonl(&io.input)?;
            let p = env.pipeline(cfg);
            p.run_stage(&mut records, Pipeline::judge);
            p.run_stage(&mut records, Pipeline::partition);
            log_skips(&records);
            write_jsonl(io.out(), &records)?;
        }
        Command::Rerank { io, alpha } => {
            let mut records: Vec<TaskRecord> = read_jsonl(&io.input)?;
            for rec in records.iter_mut().filter(|r| r.is_ok()) {
                if let Err(e) = rerank_record(rec, alpha) {
                    rec.skip(e);
                }
            }
            log_skips(&records);
            write_jsonl(io.out(), &records)?;
        }
        Command::Evaluate { io, exec } => {
            let executor = exec.executor()?;
            cfg.exec_timeout_s = exec.exec_timeout_s;
            let mut records: Vec<TaskRecord> = read_jsonl(&io.input)?;
            // execution never calls the model
            let backend = pragmatic_rerank::MockBackend::builder().build();
            let p = Pipeline::new(&backend, cfg).with_executor(executor.as_ref());
            p.run_stage(&mut records, Pipeline::evaluate);
            log_skips(&records);
            write_jsonl(io.out(), &records)?;
        }
        Command::Run {
            dataset,
            sampling,
            exec,
            alpha,
            no_reviewer,
            no_execute,
            out,
            report,
        } => {
            let env = cli.backend.open()?;
            sampling.apply(&mut cfg);
            cfg.alpha = alpha;
            cfg.reviewer = !no_reviewer;
            cfg.execute = !no_execute;
            cfg.exec_timeout_s = exec.exec_timeout_s;
            let tasks = dataset.tasks(cli.backend.backend)?;
            let executor = if no_execute { None } else { Some(exec.executor()?) };
            let mut p = env.pipeline(cfg.clone());
            if let Some(e) = &executor {
                p = p.with_executor(e.as_ref());
            }
            let started = Instant::now();
            let records = p.run_tasks(tasks);
            log_skips(&records);
            write_jsonl(&out, &records)?;
            let rep = RunReport::build(&records, alpha, cfg.sampling.num_samples).with_timing(started.elapsed());
            eprint!("{}", rep.summary());
            if let Some(path) = report {
                std::fs::write(path, rep.to_json())?;
            }
        }
        Command::Report {
            input,
            alpha,
            solved_k,
            out,
        } => {
            let mut records: Vec<TaskRecord> = read_jsonl(&input)?;
            if let Some(a) = alpha {
                for rec in records.iter_mut().filter(|r| r.is_ok()) {
                    if let Err(e) = rerank_record(rec, a) {
                        rec.skip(e);
                    }
                }
            }
            if let Some(k) = solved_k {
                records = solved_subset(&records, k);
            }
            let n = records.iter().map(|r| r.candidates.len()).max().unwrap_or(0);
            let rep = RunReport::build(&records, alpha.unwrap_or(cfg.alpha), n);
            eprint!("{}", rep.summary());
            emit(out.as_deref(), rep.to_json().as_bytes())?;
        }
        Command::SweepAlpha { input, alphas, out } => {
            let records: Vec<TaskRecord> = read_jsonl(&input)?;
            let rows = sweep_alpha(&records, &alphas)?;
            let mut buf = Vec::new();
            write_alpha_csv(&rows, &mut buf)?;
            emit(out.as_deref(), &buf)?;
        }
        Command::SweepN {
            input,
            ns,
            repeats,
            seed,
            alpha,
            out,
        } => {
            let records: Vec<TaskRecord> = read_jsonl(&input)?;
            let spec = SweepSpec {
                alpha_values: vec![],
                n_values: ns,
                repeats,
                seed,
            };
            let rows = sweep_n(&records, &spec, alpha)?;
            let mut buf = Vec::new();
            write_n_csv(&rows, &mut buf)?;
            emit(out.as_deref(), &buf)?;
        }
    }
    Ok(())
}
