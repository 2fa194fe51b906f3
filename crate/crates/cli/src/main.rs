//! `surprise-bo`: data preparation, campaigns, GAN augmentation,
//! benchmarks and the campaign service.
//!
//! Failures print one JSON line to stderr,
//! `{"error": <kind>, "exit_code": <n>, "message": <text>}`, and exit with
//! 2 (usage), 3 (configuration), 4 (data) or 1 (anything else).

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;
use surprise_bo::bench::Model;
use surprise_bo::dataset::Target;
use surprise_bo::engine::Policy;

use settings::{OracleKind, ScenarioChoice};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Data(String),
    Other(String),
}

impl CliError {
    fn kind(&self) -> (&'static str, u8) {
        match self {
            CliError::Usage(_) => ("usage", 2),
            CliError::Config(_) => ("config", 3),
            CliError::Data(_) => ("data", 4),
            CliError::Other(_) => ("runtime", 1),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Data(m) | CliError::Other(m) => m,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "surprise-bo", version, about = "Surprise-guided Bayesian optimization for melt-pool geometry")]
struct Cli {
    /// Root directory for all outputs.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// JSON file with settings for the subcommand; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load, clean, split and standardize a melt-pool table.
    Prepare(PrepareArgs),
    /// Run one campaign and report its test RMSE.
    Campaign(CampaignArgs),
    /// Train a conditional GAN, sample from it, or filter samples.
    #[command(subcommand)]
    Gan(GanCommand),
    /// Run benchmark scenarios and the synthetic-count sweep.
    Bench(BenchArgs),
    /// Start the campaign HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Serialize)]
struct PrepareArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    target: Option<Target>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
struct CampaignArgs {
    #[arg(long)]
    policy: Option<Policy>,
    #[arg(long)]
    target: Option<Target>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    oracle: Option<OracleKind>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    task_seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum GanCommand {
    /// Train on a campaign-style real warm-up.
    Train(GanTrainArgs),
    /// Draw rows from a trained model.
    Sample(GanSampleArgs),
    /// Drop sampled rows outside plausible ranges.
    Filter(GanFilterArgs),
}

#[derive(Args, Debug, Serialize)]
struct GanTrainArgs {
    #[arg(long)]
    target: Option<Target>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use the seeded synthetic task instead of a data file.
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    synthetic: bool,
    #[arg(long)]
    task_seed: Option<u64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
struct GanSampleArgs {
    /// Trained model; defaults to `<out>/gan/model.json`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    /// Condition every row on one target tercile (0, 1, 2).
    #[arg(long)]
    tercile: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
struct GanFilterArgs {
    /// Sampled batch; defaults to `<out>/gan/batch.json`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Plausible ranges; defaults to `<out>/gan/ranges.json`.
    #[arg(long)]
    ranges: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct BenchArgs {
    #[arg(long)]
    target: Option<Target>,
    #[arg(long, value_enum)]
    scenario: Option<ScenarioChoice>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    synthetic: bool,
    #[arg(long)]
    task_seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<Model>>,
    /// JSON list of comparison rows for models fitted elsewhere.
    #[arg(long)]
    external_baselines: Option<PathBuf>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    /// Also run the synthetic-count sweep.
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    sweep: bool,
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct ServeArgs {
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    /// Directory for session logs; sessions are kept in memory without it.
    #[arg(long)]
    store: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = cli.config.as_deref();
    let out = &cli.out;
    match &cli.command {
        Command::Prepare(a) => commands::prepare(settings::merge(file, a)?, out),
        Command::Campaign(a) => commands::campaign(settings::merge(file, a)?, out),
        Command::Gan(GanCommand::Train(a)) => commands::gan_train(settings::merge(file, a)?, out),
        Command::Gan(GanCommand::Sample(a)) => commands::gan_sample(settings::merge(file, a)?, out),
        Command::Gan(GanCommand::Filter(a)) => commands::gan_filter(settings::merge(file, a)?, out),
        Command::Bench(a) => commands::bench(settings::merge(file, a)?, out),
        Command::Serve(a) => commands::serve(settings::merge(file, a)?),
    }
}

fn fail(e: &CliError) -> ExitCode {
    let (kind, code) = e.kind();
    let line = serde_json::json!({"error": kind, "exit_code": code, "message": e.message()});
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let msg = e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            return fail(&CliError::Usage(msg));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
