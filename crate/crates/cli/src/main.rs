//! `memodetector`: enhance → train → eval → ablate/compare → report.
//!
//! Exit codes: 0 success, 1 operational failure, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "memodetector",
    version,
    about = "Meme emotion understanding: MLLM text enhancement + dual-stage modal fusion",
    after_help = "Config keys (TOML) and their CLI overrides:\n\
        seeds                   --seed N (single) / --seeds a,b,c\n\
        out_dir                 --out DIR\n\
        precision               --precision f32|f64\n\
        language                --language TAG\n\
        encoder.variant         --encoder toy|pretrained\n\
        encoder.archive         --archive DIR\n\
        enhance.steps           --steps ID,TM,CIM,CA | DIRECT\n\
        fusion.variant          --variant bidirectional_xattn|add|concat|oneway_xattn|no_dualstage\n\
        train.epochs            --epochs N\n\
        train.batch_size        --batch-size N\n\
        train.lr                --lr F\n\
        Endpoint auth token:    env MEMODETECTOR_TOKEN"
)]
struct Cli {
    /// Log filter (error|warn|info|debug|trace).
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the enhancement chain over every meme in a manifest.
    Enhance(EnhanceArgs),
    /// Train the fusion model over the configured seed list.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Run the six-row ablation study (full, w/o DF, w/o ID/TM/CIM/CA).
    Ablate(SweepArgs),
    /// Compare second-stage fusion strategies and enhancement strategies.
    Compare(SweepArgs),
    /// Consolidate run metrics into one CSV and render comparison charts.
    Report(ReportArgs),
    /// Check manifest well-formedness, cache coverage and config schema.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single seed (overrides the seed list).
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seed list (overrides seeds).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Numeric precision for training (f32|f64).
    #[arg(long)]
    precision: Option<String>,
    /// Train/evaluate only memes with this language tag.
    #[arg(long)]
    language: Option<String>,
    /// Encoder backend (toy|pretrained).
    #[arg(long)]
    encoder: Option<String>,
    /// Feature-archive directory for the pretrained backend.
    #[arg(long)]
    archive: Option<PathBuf>,
    /// Enabled enhancement steps, e.g. ID,TM,CIM,CA or DIRECT.
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<String>>,
    /// Fusion variant.
    #[arg(long)]
    variant: Option<String>,
    /// Epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Early-stop patience on validation macro-F1 (0 disables).
    #[arg(long)]
    patience: Option<usize>,
    /// Assign split tags to untagged instances with this seed.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Split ratio used with --split-seed, as train:val:test.
    #[arg(long, default_value = "8:1:1")]
    split_ratio: String,
}

#[derive(Args)]
struct EnhanceArgs {
    /// Dataset manifest (JSON Lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Enhancement cache to read/append (JSON Lines).
    #[arg(long)]
    cache: PathBuf,
    /// Chat-completions API base URL (e.g. http://host:8000/v1).
    #[arg(long, required_unless_present = "mock")]
    endpoint: Option<String>,
    /// Model identifier sent to the endpoint.
    #[arg(long, required_unless_present = "mock")]
    model: Option<String>,
    /// Use the deterministic echo backend instead of an endpoint.
    #[arg(long)]
    mock: bool,
    /// Parallel meme workers.
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Steps to run, e.g. ID,TM,CIM,CA or DIRECT.
    #[arg(long, value_delimiter = ',', default_values_t = ["ID".to_string(), "TM".to_string(), "CIM".to_string(), "CA".to_string()])]
    steps: Vec<String>,
    /// Sampling temperature recorded into provenance.
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Maximum output tokens per step.
    #[arg(long, default_value_t = 512)]
    max_tokens: u32,
    /// Endpoint timeout in seconds.
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
    /// Transport retry attempts per request.
    #[arg(long, default_value_t = 3)]
    retry_attempts: u32,
    /// Initial retry backoff in milliseconds (doubles per attempt).
    #[arg(long, default_value_t = 1000)]
    retry_base_ms: u64,
    /// Only enhance memes with this language tag.
    #[arg(long)]
    language: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    /// Split to evaluate (train|val|test).
    #[arg(long, default_value = "test")]
    split: String,
    /// Optional directory for eval_metrics.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long, default_value = "8:1:1")]
    split_ratio: String,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Directories to scan recursively for run.json summaries.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    inputs: Vec<PathBuf>,
    /// Output directory for consolidated.csv and charts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Cache to check for coverage.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Steps coverage is checked against.
    #[arg(long, value_delimiter = ',', default_values_t = ["ID".to_string(), "TM".to_string(), "CIM".to_string(), "CA".to_string()])]
    steps: Vec<String>,
    /// Config file to schema-check.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .init();

    let outcome = match cli.command {
        Command::Enhance(args) => commands::enhance(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Ablate(args) => commands::ablate(args),
        Command::Compare(args) => commands::compare(args),
        Command::Report(args) => commands::report(args),
        Command::Validate(args) => commands::validate(args),
    };
    match outcome {
        Ok(code) => code,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(1)
        }
    }
}
