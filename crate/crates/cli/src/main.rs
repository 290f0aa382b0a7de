mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use trajbench::rollout::Format;

#[derive(Parser, Debug)]
#[command(name = "trajbench", version, about = "Build and score long-context QA datasets from simulated agent trajectories")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Global {
    /// Top-level seed; every artifact is a function of it and the flags.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Directory that receives the command's outputs.
    #[arg(long, global = true, default_value = "out")]
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = CounterMode::Approx)]
    pub counter: CounterMode,
    #[arg(long, global = true, default_value = "info")]
    #[serde(skip)]
    pub log_level: log::LevelFilter,
    /// Worker threads for parallel stages (defaults to the core count).
    #[arg(long, global = true)]
    #[serde(skip)]
    pub jobs: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterMode {
    /// Four bytes per token plus four per message.
    Approx,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    Concise,
    Verbose,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Concise => Format::Concise,
            FormatArg::Verbose => Format::Verbose,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a corpus of game trajectories.
    Generate(GenerateArgs),
    /// Replace every name in a corpus with opaque symbols.
    Mask(MaskArgs),
    /// Truncate trajectories into context-length buckets.
    Bucket(BucketArgs),
    /// Draw question samples from bucketed trajectories.
    Qa(QaArgs),
    /// Send a dataset to a chat-completions endpoint.
    Evaluate(EvaluateArgs),
    /// Aggregate evaluation results into accuracy tables.
    Report(ReportArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    /// Item file (delimited text or JSON array).
    #[arg(long, conflicts_with = "synthetic")]
    #[serde(skip)]
    pub universe: Option<PathBuf>,
    /// Schema description for --universe (JSON); defaults to the canonical schema.
    #[arg(long, requires = "universe")]
    #[serde(skip)]
    pub schema: Option<PathBuf>,
    /// Synthetic universe: `n=400[,names=pronounceable]` or a JSON spec file.
    #[arg(long)]
    pub synthetic: Option<String>,
    #[arg(long, value_enum, default_value_t = FormatArg::Concise)]
    pub format: FormatArg,
    /// Number of games to simulate.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub max_rounds: Option<u32>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub history_window: Option<u32>,
    #[arg(long)]
    pub forget_prob: Option<f64>,
    #[arg(long)]
    pub mask_prob: Option<f64>,
    #[arg(long)]
    pub max_mask_sections: Option<usize>,
    /// Stop a game once its transcript exceeds this many tokens.
    #[arg(long)]
    pub stop_after_tokens: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
pub struct MaskArgs {
    /// Directory holding universe.json and trajectories.jsonl (defaults to --out-dir).
    #[arg(long = "in")]
    #[serde(skip)]
    pub input: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct BucketArgs {
    /// Directory holding trajectories.jsonl (defaults to --out-dir).
    #[arg(long = "in")]
    #[serde(skip)]
    pub input: Option<PathBuf>,
    /// Bucket limits, e.g. `32k,64k,1m`; defaults to 32k through 4m.
    #[arg(long, value_delimiter = ',', value_parser = commands::parse_limit)]
    pub buckets: Option<Vec<u64>>,
    #[arg(long, default_value_t = 0.9)]
    pub fill_floor: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct QaArgs {
    /// Directory holding trajectories.jsonl and buckets.jsonl (defaults to --out-dir).
    #[arg(long = "in")]
    #[serde(skip)]
    pub input: Option<PathBuf>,
    /// Quota file (JSON).
    #[arg(long, conflicts_with_all = ["preset", "per_type"])]
    #[serde(skip)]
    pub quota: Option<PathBuf>,
    /// Built-in quota, e.g. `paper-ki-concise`.
    #[arg(long, conflicts_with = "per_type")]
    pub preset: Option<String>,
    /// The same count for every question type and bucket.
    #[arg(long)]
    pub per_type: Option<u32>,
    /// Keep only these buckets of the quota.
    #[arg(long, value_delimiter = ',', value_parser = commands::parse_limit)]
    pub buckets: Option<Vec<u64>>,
    /// Section weights for weighted-summation questions (JSON).
    #[arg(long)]
    #[serde(skip)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = trajbench::postprocess::DEFAULT_MIN_CANDIDATES)]
    pub min_candidates: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    /// Dataset file (defaults to dataset.jsonl in --out-dir).
    #[arg(long)]
    #[serde(skip)]
    pub dataset: Option<PathBuf>,
    /// Full URL of the chat-completions route.
    #[arg(long)]
    pub endpoint: String,
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 0.7)]
    pub temperature: f64,
    #[arg(long, default_value_t = 4)]
    pub max_concurrent: usize,
    #[arg(long, default_value_t = 600)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
    #[arg(long, default_value_t = 500)]
    pub backoff_ms: u64,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    pub api_key_env: String,
    /// Stop after this many new results; a later run resumes.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    /// Dataset file (defaults to dataset.jsonl in --out-dir).
    #[arg(long)]
    #[serde(skip)]
    pub dataset: Option<PathBuf>,
    /// Results file, or a directory of `*.jsonl` result files.
    #[arg(long = "in")]
    #[serde(skip)]
    pub input: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.global.log_level)
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match &cli.command {
        Command::Generate(a) => commands::generate(&cli.global, a),
        Command::Mask(a) => commands::mask(&cli.global, a),
        Command::Bucket(a) => commands::bucket(&cli.global, a),
        Command::Qa(a) => commands::qa(&cli.global, a),
        Command::Evaluate(a) => commands::evaluate(&cli.global, a),
        Command::Report(a) => commands::report(&cli.global, a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
