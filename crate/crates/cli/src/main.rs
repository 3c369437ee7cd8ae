use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use irplan_cli::commands::{self, EstimateArgs, EvaluateArgs, PlanArgs, VerifyKind};
use irplan_cli::config::{AppConfig, BackendKind, LlmWiring};
use irplan_cli::service::{self, AppState, ServiceConfig};
use irplan_core::evaluation::ReportFormat;

#[derive(Parser)]
#[command(name = "irplan", version, about = "Incident response planning with rollout lookahead")]
struct Cli {
    /// Seed for every random draw; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with `planner`, `llm` and `synthetic` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Default)]
struct LlmFlags {
    /// Serve LLM replies from a recorded fixture.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Record live LLM exchanges to a fixture.
    #[arg(long)]
    record: Option<PathBuf>,
}

impl From<LlmFlags> for LlmWiring {
    fn from(f: LlmFlags) -> Self {
        LlmWiring {
            replay: f.replay,
            record: f.record,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a response to one incident and write the trajectory as JSON.
    Plan {
        #[arg(long)]
        incident: PathBuf,
        #[arg(long, value_enum, default_value_t = BackendKind::Synthetic)]
        backend: BackendKind,
        /// Candidates per step.
        #[arg(long)]
        n: Option<usize>,
        /// Rollouts per candidate.
        #[arg(long)]
        m: Option<usize>,
        /// Score candidates by exact expectation instead of rollouts.
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Local knowledgebase for indicator enrichment.
        #[arg(long)]
        kb: Option<PathBuf>,
        #[command(flatten)]
        llm: LlmFlags,
    },
    /// Numerical checks of the value-error bound, filtering and estimation.
    Verify {
        #[command(subcommand)]
        check: VerifyCommand,
    },
    /// Estimate the hallucination rate with a Hoeffding bound.
    EstimateH {
        #[arg(long, value_enum, default_value_t = BackendKind::Synthetic)]
        backend: BackendKind,
        #[arg(long)]
        incident: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        samples: usize,
        #[arg(long, default_value_t = 0.99)]
        confidence: f64,
        /// Candidate count for the joint bound.
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// JSON map from action text to hallucinated flag.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        llm: LlmFlags,
    },
    /// Score plans over a corpus directory with a manifest.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated planner seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = BackendKind::Synthetic)]
        backend: BackendKind,
        /// JSON map from action text to step label.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        llm: LlmFlags,
    },
    /// Time candidate evaluation against a fixed-latency model.
    BenchScaling {
        #[arg(long, default_value_t = 50)]
        latency_ms: u64,
        #[arg(long, default_value_t = 4)]
        max_n: usize,
    },
    /// Run the session HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, value_enum, default_value_t = BackendKind::Synthetic)]
        backend: BackendKind,
        /// Directory for session snapshots; sessions there are restored.
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
        #[arg(long)]
        kb: Option<PathBuf>,
        #[command(flatten)]
        llm: LlmFlags,
    },
}

#[derive(Subcommand)]
enum VerifyCommand {
    /// Value-error bound on random models.
    Lemma1 {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0.3)]
        max_lambda: f64,
        #[arg(long, default_value_t = 1e-6)]
        slack: f64,
        /// Write one row per trial here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Non-hallucinated selection under the filter condition.
    Prop1 {
        #[arg(long, default_value_t = 500)]
        models: usize,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Hoeffding estimation trials.
    Prop2 {
        #[arg(long, default_value_t = 10)]
        actions: usize,
        #[arg(long, default_value_t = 3)]
        hallucinated: usize,
        #[arg(long, default_value_t = 30)]
        samples: usize,
        #[arg(long, default_value_t = 0.2)]
        epsilon: f64,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
    },
}

fn emit(bytes: &[u8], out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut app = AppConfig::load_or_default(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        app.planner.seed = seed;
        app.synthetic.seed = seed;
    }
    let seed = app.planner.seed;
    match cli.command {
        Command::Plan { incident, backend, n, m, exact, out, kb, llm } => {
            app.planner = commands::planner_with(&app.planner, n, m, None, exact);
            let args = PlanArgs {
                incident,
                backend,
                kb,
                llm: llm.into(),
            };
            emit(&commands::run_plan(&app, &args)?, out.as_deref())
        }
        Command::Verify { check } => {
            let (kind, csv) = match check {
                VerifyCommand::Lemma1 { trials, max_lambda, slack, csv } => {
                    (VerifyKind::ValueBound { trials, max_lambda, slack }, csv)
                }
                VerifyCommand::Prop1 { models, n, csv } => (VerifyKind::FilterCondition { models, n_candidates: n }, csv),
                VerifyCommand::Prop2 { actions, hallucinated, samples, epsilon, trials } => (
                    VerifyKind::Estimation { actions, hallucinated, samples, epsilon, trials },
                    None,
                ),
            };
            let (summary, rows) = commands::run_verify(kind, seed)?;
            if let (Some(path), Some(rows)) = (csv, rows) {
                emit(&rows, Some(&path))?;
            }
            emit(&summary, None)
        }
        Command::EstimateH { backend, incident, samples, confidence, n, labels, out, llm } => {
            let args = EstimateArgs {
                backend,
                incident,
                samples,
                confidence,
                n,
                labels,
                llm: llm.into(),
            };
            emit(&commands::run_estimate(&app, &args, seed)?, out.as_deref())
        }
        Command::Evaluate { corpus, seeds, format, out, backend, labels, llm } => {
            let args = EvaluateArgs {
                corpus,
                seeds,
                format: match format {
                    Format::Json => ReportFormat::Json,
                    Format::Csv => ReportFormat::Csv,
                },
                backend,
                labels,
                llm: llm.into(),
            };
            emit(&commands::run_evaluate(&app, &args)?, out.as_deref())
        }
        Command::BenchScaling { latency_ms, max_n } => {
            emit(&commands::run_bench_scaling(Duration::from_millis(latency_ms), max_n)?, None)
        }
        Command::Serve { port, backend, snapshot_dir, kb, llm } => {
            let state = AppState::new(ServiceConfig {
                kb: commands::load_kb(kb.as_deref())?,
                app,
                backend,
                llm: llm.into(),
                snapshot_dir,
            })?;
            tokio::runtime::Runtime::new()?.block_on(service::serve(state, port))
        }
    }
}

fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
