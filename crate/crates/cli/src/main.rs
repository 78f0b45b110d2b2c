//! `reclab`: one binary wiring the pipeline end to end — synthetic worlds,
//! reasoning-record construction, consistency filtering, supervised and
//! policy-gradient training, ranking evaluation, and reporting.
//!
//! Every subcommand works out of one artifact directory (`--out`), reads its
//! upstream artifacts from there, and overwrites its own outputs. Runs are
//! deterministic: the same config and seed reproduce byte-identical
//! artifacts, save for the timestamp header on the config snapshot.

mod appcfg;
mod report;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Why a run stopped, mapped onto the exit-code contract:
/// 2 configuration error, 3 missing upstream artifact, 4 backend failure,
/// 1 anything else.
#[derive(Debug)]
pub enum Failure {
    Config(Vec<String>),
    Missing { path: PathBuf, hint: String },
    Backend(String),
    Other(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Missing { .. } => 3,
            Failure::Backend(_) => 4,
            Failure::Other(_) => 1,
        }
    }

    fn report(&self) {
        match self {
            Failure::Config(violations) => {
                eprintln!("configuration error:");
                for v in violations {
                    eprintln!("  - {v}");
                }
            }
            Failure::Missing { path, hint } => {
                eprintln!("missing artifact: {} ({hint})", path.display());
            }
            Failure::Backend(message) => eprintln!("backend error: {message}"),
            Failure::Other(error) => eprintln!("error: {error:#}"),
        }
    }
}

impl From<reclab_core::Error> for Failure {
    fn from(e: reclab_core::Error) -> Failure {
        use reclab_core::Error;
        match e {
            Error::InvalidConfig { violations } => Failure::Config(violations),
            Error::ContextOverflow { .. } => Failure::Config(vec![e.to_string()]),
            Error::Remote(_)
            | Error::MissingEnvVar { .. }
            | Error::GenerationFailed { .. } => Failure::Backend(e.to_string()),
            other => Failure::Other(other.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::Other(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Failure {
        Failure::Other(e)
    }
}

#[derive(Parser)]
#[command(
    name = "reclab",
    version,
    about = "Desk-scale laboratory for post-training a generative recommender",
    after_help = appcfg::help_footer()
)]
struct Cli {
    /// TOML configuration file; missing sections use built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key (repeatable), e.g. --set run.seed=3.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Master seed; shorthand for --set run.seed=N, applied last.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads for the parallel sections (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Artifact directory every stage reads from and writes to.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world: catalog, sequences, ground-truth labels,
    /// and fabricated reasoning records.
    Synth,
    /// Build reasoning records with the configured generation backend:
    /// captions, draft summary, refined profile.
    BuildCot {
        /// Also grade every record against the quality rubric.
        #[arg(long)]
        grade: bool,
    },
    /// Score reasoning records for consistency, keep the top fraction, and
    /// export the mixed dataset.
    Filter {
        /// Fraction of users to keep (default: run.retention_sft).
        #[arg(long, value_name = "FRACTION")]
        p: Option<f64>,
    },
    /// Supervised fine-tuning on the mixed dataset's training split.
    Sft,
    /// Policy optimization with grouped rollouts, starting from the
    /// fine-tuned checkpoint.
    Grpo,
    /// Rank the held-out target among sampled candidates for every user of
    /// one split.
    Eval {
        /// Checkpoint to score: "sft", "grpo", or "auto" (grpo when present).
        #[arg(long, default_value = "auto", value_name = "WHICH")]
        model: String,
    },
    /// Summarize metrics and evaluation into a markdown report and a
    /// training-curve SVG.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            failure.report();
            ExitCode::from(failure.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.workers {
        if n > 0 {
            // Ignore the error if a pool already exists; thread count only
            // affects wall time, never results.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cfg = appcfg::load(cli.config.as_deref(), &cli.set, cli.seed)?;
    std::fs::create_dir_all(&cli.out)?;
    appcfg::write_snapshot(&cfg, &cli.out.join(stages::CONFIG_SNAPSHOT))?;
    match cli.command {
        Command::Synth => stages::synth(&cfg, &cli.out),
        Command::BuildCot { grade } => stages::build_cot(&cfg, &cli.out, grade),
        Command::Filter { p } => stages::filter(&cfg, &cli.out, p),
        Command::Sft => stages::sft(&cfg, &cli.out),
        Command::Grpo => stages::grpo(&cfg, &cli.out),
        Command::Eval { model } => stages::eval(&cfg, &cli.out, &model),
        Command::Report => stages::report(&cfg, &cli.out),
    }
}
