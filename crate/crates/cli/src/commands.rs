use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::CommandFactory;
use framelens::corpus::{build_pairs, load_corpus, negate, write_pairs, Cutoff, Horizon, LoadOptions, RuleNegator, Source};
use framelens::gateway::GatewayMode;
use framelens::harness::{load_report, run_audit, BackendKind, HarnessError, RunConfig};
use framelens::judge::{calibrate, load_calibration, Judge};
use framelens::metrics::AuditReport;
use framelens::strategies::{Strategy, Task};
use framelens::text::WordPunctTokenizer;
use serde_json::json;

use crate::{AuditArgs, BackendArgs, BackendChoice, CalibrateArgs, Cli, Command, DatasetArgs, FactcheckArgs, Format, NegateArgs, ReportArgs};

/// Error printed as one JSON object on stderr.
#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }

    pub fn to_json(&self) -> String {
        json!({"error": {"kind": self.kind, "message": self.message}}).to_string()
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

impl From<framelens::judge::JudgeError> for CliError {
    fn from(e: framelens::judge::JudgeError) -> Self {
        Self::new("judge", e.to_string())
    }
}

impl From<framelens::corpus::CorpusError> for CliError {
    fn from(e: framelens::corpus::CorpusError) -> Self {
        Self::new("corpus", e.to_string())
    }
}

/// Usage error: clap's message format and exit status 2.
fn usage(kind: ErrorKind, message: impl std::fmt::Display) -> ! {
    Cli::command().error(kind, message).exit()
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::AuditSummarize(args) => audit(Task::Summarization, &args, None),
        Command::AuditFactcheck(args) => audit(Task::FactCheck, &args.audit, Some(&args)),
        Command::JudgeCalibrate(args) => judge_calibrate(&args),
        Command::Negate(args) => negate_cmd(&args),
        Command::Report(args) => report(&args),
    }
}

/// Base config: manifest, then --config, then `<replay-dir>/config.toml`.
fn base_config(args: &AuditArgs) -> Result<RunConfig, CliError> {
    if let Some(m) = &args.manifest {
        return Ok(RunConfig::from_manifest(m)?);
    }
    if let Some(c) = &args.config {
        return Ok(RunConfig::load(c)?);
    }
    config_in(args.backend.replay_dir.as_deref())
}

fn config_in(dir: Option<&Path>) -> Result<RunConfig, CliError> {
    match dir.map(|d| d.join("config.toml")).filter(|p| p.is_file()) {
        Some(p) => Ok(RunConfig::load(&p)?),
        None => Ok(RunConfig::default()),
    }
}

fn apply_backend(cfg: &mut RunConfig, b: &BackendArgs) {
    if let Some(dir) = &b.replay_dir {
        cfg.backend.replay_dir = Some(dir.clone());
    }
    let live_or_record = if b.record { GatewayMode::Record } else { GatewayMode::Live };
    match b.backend {
        Some(BackendChoice::Replay) => cfg.backend.mode = GatewayMode::Replay,
        Some(BackendChoice::Http) => {
            cfg.backend.kind = BackendKind::Http;
            cfg.backend.mode = live_or_record;
        }
        Some(BackendChoice::Synthetic) => {
            cfg.backend.kind = BackendKind::Synthetic;
            cfg.backend.mode = live_or_record;
        }
        None if b.record => cfg.backend.mode = GatewayMode::Record,
        None => {}
    }
    if let Some(url) = &b.base_url {
        cfg.backend.base_url = Some(url.clone());
    }
    if let Some(var) = &b.api_key_env {
        cfg.backend.api_key_env = Some(var.clone());
    }
    if let Some(n) = b.parallelism {
        cfg.parallelism = n;
    }
}

fn apply_dataset(cfg: &mut RunConfig, d: &DatasetArgs) {
    if let Some(p) = &d.dataset {
        cfg.dataset.path = p.clone();
    }
    if let Some(s) = d.source {
        cfg.dataset.source = s;
    }
    if let Some(n) = d.max_tokens {
        cfg.dataset.max_tokens = n;
    }
    if let Some(n) = d.sample {
        cfg.dataset.sample_size = n;
    }
    if let Some(s) = d.seed {
        cfg.dataset.seed = s;
    }
}

fn audit(task: Task, args: &AuditArgs, factcheck: Option<&FactcheckArgs>) -> Result<(), CliError> {
    let mut cfg = base_config(args)?;
    cfg.task = task;
    apply_backend(&mut cfg, &args.backend);
    apply_dataset(&mut cfg, &args.dataset);
    if let Some(m) = &args.model {
        cfg.model = m.clone();
    }
    if let Some(j) = &args.judge {
        cfg.judge.model = Some(j.clone());
    }
    if let Some(m) = args.judge_mode {
        cfg.judge.mode = m.into();
    }
    if let Some(s) = args.strategy {
        cfg.strategy = s;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(f) = factcheck {
        if let Some(c) = &f.cutoff_date {
            if let Err(e) = c.parse::<Cutoff>() {
                usage(ErrorKind::ValueValidation, format!("invalid value for --cutoff-date: {e}"));
            }
            cfg.cutoff = Some(c.clone());
        }
        if let Some(v) = f.failed_verdicts {
            cfg.failed_verdicts = v.into();
        }
    }
    if !cfg.strategy.supports(task) {
        let cmd = if task == Task::Summarization { "audit-summarize" } else { "audit-factcheck" };
        usage(
            ErrorKind::InvalidValue,
            format!("--strategy {} is not available for {cmd}", cfg.strategy),
        );
    }
    if cfg.strategy == Strategy::KnowledgeBoundary && cfg.cutoff.is_none() {
        usage(
            ErrorKind::MissingRequiredArgument,
            "--cutoff-date <DATE> is required with --strategy knowledge_boundary",
        );
    }
    if cfg.model.is_empty() {
        return Err(CliError::new("config", "no model given (use --model or a config file)"));
    }

    let outcome = run_audit(&cfg, &args.out)?;
    let summary = json!({
        "run_id": outcome.manifest.run_id,
        "run_dir": outcome.run_dir,
        "report": outcome.run_dir.join("report.json"),
        "n_input": outcome.report.n_input,
        "n_quarantined": outcome.report.n_quarantined,
        "backend_calls": outcome.manifest.backend_calls,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn judge_calibrate(args: &CalibrateArgs) -> Result<(), CliError> {
    let (data, fixture_dir) = if args.fixture.is_dir() {
        (args.fixture.join("calibration.jsonl"), Some(args.fixture.clone()))
    } else {
        (args.fixture.clone(), None)
    };
    let config_dir = args.backend.replay_dir.clone().or_else(|| fixture_dir.clone());
    let mut cfg = config_in(config_dir.as_deref())?;
    if cfg.backend.replay_dir.is_none() {
        cfg.backend.replay_dir = fixture_dir;
    }
    apply_backend(&mut cfg, &args.backend);
    if let Some(j) = &args.judge {
        cfg.judge.model = Some(j.clone());
    }
    if let Some(m) = args.mode {
        cfg.judge.mode = m.into();
    }
    let model = cfg.judge_model().to_string();
    if model.is_empty() {
        usage(ErrorKind::MissingRequiredArgument, "--judge <MODEL> is required (no judge model configured)");
    }

    let records = load_calibration(&data)?;
    let gateway = cfg.gateway()?;
    let judge = Judge::new(&gateway, &model);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.max(1))
        .build()
        .map_err(|e| CliError::new("pool", e.to_string()))?;
    let report = pool.install(|| calibrate(&records, &judge, cfg.judge.mode))?;

    let json = serde_json::to_string_pretty(&report).expect("calibration report serializes") + "\n";
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for (name, body) in [
            ("calibration.md", report.to_markdown()),
            ("calibration.csv", report.to_csv()),
            ("calibration.json", json.clone()),
        ] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| CliError::io(&p, e))?;
        }
    }
    let out = match args.format {
        Format::Markdown => report.to_markdown(),
        Format::Csv => report.to_csv(),
        Format::Json => json,
    };
    print!("{out}");
    Ok(())
}

fn negate_cmd(args: &NegateArgs) -> Result<(), CliError> {
    let Some(input) = &args.input else {
        for t in &args.text {
            println!("{}", negate(t, &RuleNegator).map_err(|e| CliError::new("negate", e.to_string()))?);
        }
        return Ok(());
    };
    let Some(raw) = &args.cutoff_date else {
        usage(ErrorKind::MissingRequiredArgument, "--cutoff-date <DATE> is required with --input");
    };
    let cutoff: Cutoff = raw
        .parse()
        .unwrap_or_else(|e| usage(ErrorKind::ValueValidation, format!("invalid value for --cutoff-date: {e}")));
    let d = &args.dataset;
    let mut opts = LoadOptions::new(d.source.unwrap_or(Source::Custom));
    opts.max_tokens = d.max_tokens.unwrap_or(opts.max_tokens);
    opts.sample_size = d.sample.unwrap_or(opts.sample_size);
    opts.seed = d.seed.unwrap_or(opts.seed);
    let docs = load_corpus(input, &opts, &WordPunctTokenizer)?;
    let pairs = build_pairs(&docs, cutoff.date, &RuleNegator)?;
    let output: &PathBuf = args.output.as_ref().expect("clap requires --output with --input");
    write_pairs(output, &pairs)?;
    let pre = pairs.iter().filter(|p| p.horizon == Horizon::PreCutoff).count();
    let summary = json!({
        "output": output,
        "pairs": pairs.len(),
        "pre_cutoff": pre,
        "post_cutoff": pairs.len() - pre,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn report(args: &ReportArgs) -> Result<(), CliError> {
    let reports: Vec<AuditReport> = args.runs.iter().map(|r| load_report(r)).collect::<Result<_, _>>()?;
    let out = match args.format {
        Format::Markdown => AuditReport::to_markdown(&reports),
        Format::Csv => AuditReport::to_csv(&reports).map_err(|e| CliError::new("csv", e.to_string()))?,
        Format::Json => serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n",
    };
    match &args.output {
        Some(p) => fs::write(p, out).map_err(|e| CliError::io(p, e)),
        None => std::io::stdout()
            .write_all(out.as_bytes())
            .map_err(|e| CliError::new("io", e.to_string())),
    }
}
