mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use framelens::corpus::Source;
use framelens::judge::CalibrationMode;
use framelens::strategies::{FailedVerdicts, Strategy};

/// Framing, primacy and hallucination audits for language models.
#[derive(Debug, Parser)]
#[command(name = "framelens", version, about)]
pub struct Cli {
    /// More log output (-v info, -vv debug). Logs go to stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Summarize a corpus and measure framing change and positional coverage.
    AuditSummarize(AuditArgs),
    /// Score true/falsified statement pairs before and after a knowledge cutoff.
    AuditFactcheck(FactcheckArgs),
    /// Measure judge accuracy on a labeled rating set.
    JudgeCalibrate(CalibrateArgs),
    /// Negate statements, or turn a dated news file into true/falsified pairs.
    Negate(NegateArgs),
    /// Print stored run reports as a table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    /// OpenAI-compatible chat-completions endpoint.
    Http,
    /// Answer only from a recorded store; never touches the network.
    Replay,
    /// Built-in offline toy model.
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Markdown,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JudgeModeArg {
    Rating,
    Framing,
}

impl From<JudgeModeArg> for CalibrationMode {
    fn from(m: JudgeModeArg) -> Self {
        match m {
            JudgeModeArg::Rating => CalibrationMode::Rating,
            JudgeModeArg::Framing => CalibrationMode::Framing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FailedVerdictsArg {
    Incorrect,
    Exclude,
}

impl From<FailedVerdictsArg> for FailedVerdicts {
    fn from(f: FailedVerdictsArg) -> Self {
        match f {
            FailedVerdictsArg::Incorrect => FailedVerdicts::Incorrect,
            FailedVerdictsArg::Exclude => FailedVerdicts::Exclude,
        }
    }
}

/// Where model answers come from.
#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// Backend kind. Defaults to the config's backend.
    #[arg(long, value_enum)]
    pub backend: Option<BackendChoice>,
    /// Record every answer into the replay directory (http and synthetic).
    #[arg(long)]
    pub record: bool,
    /// Replay store directory. A config.toml found there is used as the
    /// base configuration when --config and --manifest are absent.
    #[arg(long, value_name = "DIR")]
    pub replay_dir: Option<PathBuf>,
    /// Base URL of the chat-completions endpoint, e.g. http://localhost:8000/v1.
    #[arg(long, value_name = "URL")]
    pub base_url: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, value_name = "VAR")]
    pub api_key_env: Option<String>,
    /// Worker threads for per-item calls.
    #[arg(long, value_name = "N")]
    pub parallelism: Option<usize>,
}

/// Dataset selection and sampling.
#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    /// Input file (newline-delimited JSON).
    #[arg(long, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    /// Corpus source: amazon_reviews, mediasum, news_pre, news_post, custom.
    #[arg(long)]
    pub source: Option<Source>,
    /// Drop documents longer than this many tokens.
    #[arg(long, value_name = "N")]
    pub max_tokens: Option<usize>,
    /// Number of documents to sample.
    #[arg(long, value_name = "N")]
    pub sample: Option<usize>,
    /// Sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct AuditArgs {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH", conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Re-run the configuration stored in a run manifest, in replay mode.
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Audited model.
    #[arg(long)]
    pub model: Option<String>,
    /// Judge model; defaults to the audited model.
    #[arg(long)]
    pub judge: Option<String>,
    /// How the judge labels framing.
    #[arg(long, value_enum)]
    pub judge_mode: Option<JudgeModeArg>,
    /// Mitigation strategy, e.g. baseline, self_awareness, mirostat.
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Primacy margin.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Root directory for run outputs.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FactcheckArgs {
    #[command(flatten)]
    pub audit: AuditArgs,
    /// Model knowledge cutoff, YYYY-MM or YYYY-MM-DD. Required for knowledge_boundary.
    #[arg(long, value_name = "DATE")]
    pub cutoff_date: Option<String>,
    /// Scoring of verdicts that stay unparseable after the reprompt.
    #[arg(long, value_enum)]
    pub failed_verdicts: Option<FailedVerdictsArg>,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    /// Labeled records ({id, text, rating}), or a directory holding
    /// calibration.jsonl and optionally config.toml and a replay store.
    #[arg(long, value_name = "PATH")]
    pub fixture: PathBuf,
    /// Judge model; defaults to the configured judge.
    #[arg(long)]
    pub judge: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<JudgeModeArg>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Output format on stdout.
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: Format,
    /// Also write calibration.{md,csv,json} into this directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct NegateArgs {
    /// Statements to negate, one output line each.
    #[arg(conflicts_with = "input", required_unless_present = "input")]
    pub text: Vec<String>,
    /// Dated news records ({id, text, date}) to turn into pairs.
    #[arg(long, value_name = "PATH", requires = "output")]
    pub input: Option<PathBuf>,
    /// Pair file to write.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Knowledge cutoff used to tag each pair pre or post. Required with --input.
    #[arg(long, value_name = "DATE")]
    pub cutoff_date: Option<String>,
    #[command(flatten)]
    pub dataset: DatasetArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directories.
    #[arg(required = true, value_name = "RUN_DIR")]
    pub runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: Format,
    /// Write to this file instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(1)
        }
    }
}
