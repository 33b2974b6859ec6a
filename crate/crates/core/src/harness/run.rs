use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use chrono::Utc;
use sha2::{Digest, Sha256};

use super::pipeline::{audit_factcheck, audit_summarization, load_inputs, Inputs};
use super::{DatasetInfo, HarnessError, RunConfig, RunManifest, RunRecord};
use crate::metrics::AuditReport;
use crate::strategies::Strategy;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_MD: &str = "report.md";

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
    pub report: AuditReport,
}

fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

fn json_err(path: &Path) -> impl Fn(serde_json::Error) -> HarnessError + '_ {
    move |source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes report.json, report.csv and report.md into `dir`.
pub fn write_reports(dir: &Path, report: &AuditReport) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(report).map_err(json_err(dir))?;
    write(&dir.join(REPORT_JSON), &(json + "\n"))?;
    write(&dir.join(REPORT_CSV), &AuditReport::to_csv(std::slice::from_ref(report))?)?;
    write(&dir.join(REPORT_MD), &AuditReport::to_markdown(std::slice::from_ref(report)))
}

/// Loads inputs, runs the configured audit, and writes everything under
/// `<out_root>/<run_id>/`. Records are written once, by this thread only.
pub fn run_audit(cfg: &RunConfig, out_root: &Path) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let started_at = Utc::now();
    let run_id = cfg.run_id();
    let inputs = load_inputs(cfg)?;
    if inputs.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let gateway = cfg.gateway()?;
    let (audit, embedding_provider) = match &inputs {
        Inputs::Documents(docs) => {
            let embedder = cfg.embedder()?;
            (audit_summarization(cfg, docs, &gateway, &embedder)?, Some(embedder.provider_id()))
        }
        Inputs::Pairs(pairs) => (audit_factcheck(cfg, pairs, &gateway)?, None),
    };
    let summarizing = matches!(inputs, Inputs::Documents(_));
    let manifest = RunManifest {
        run_id: run_id.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        task: cfg.task,
        model: cfg.model.clone(),
        dataset: DatasetInfo {
            id: cfg.dataset_id(),
            path: cfg.dataset.path.clone(),
            sha256: sha256_file(&cfg.dataset.path)?,
            source: cfg.dataset.source.as_str().to_string(),
            seed: cfg.dataset.seed,
            sample_size: cfg.dataset.sample_size,
            max_tokens: cfg.dataset.max_tokens,
            n_loaded: inputs.len(),
        },
        strategy: cfg.strategy,
        processors: match cfg.strategy.processor() {
            Some(default) => cfg.processors.clone().unwrap_or_else(|| vec![default]),
            None => Vec::new(),
        },
        judge_model: summarizing.then(|| cfg.judge_model().to_string()),
        judge_mode: summarizing.then_some(cfg.judge.mode),
        salience_provider: (cfg.strategy == Strategy::AttentionSort)
            .then(|| format!("draft-similarity-proxy:{}", embedding_provider.clone().unwrap_or_default())),
        embedding_provider,
        gateway: gateway.describe(),
        gateway_mode: gateway.mode(),
        replay_dir: cfg.backend.replay_dir.clone(),
        backend_calls: gateway.backend_calls(),
        config: cfg.clone(),
        started_at,
        finished_at: Utc::now(),
    };

    let run_dir = out_root.join(&run_id);
    fs::create_dir_all(&run_dir).map_err(|e| HarnessError::io(&run_dir, e))?;
    let manifest_path = run_dir.join(MANIFEST_FILE);
    let m = serde_json::to_string_pretty(&manifest).map_err(json_err(&manifest_path))?;
    write(&manifest_path, &(m + "\n"))?;
    let records_path = run_dir.join(RECORDS_FILE);
    let mut lines = String::new();
    for r in &audit.records {
        lines.push_str(&serde_json::to_string(r).map_err(json_err(&records_path))?);
        lines.push('\n');
    }
    write(&records_path, &lines)?;
    write_reports(&run_dir, &audit.report)?;
    log::info!(
        "run {run_id}: {} items, {} quarantined, written to {}",
        audit.report.n_input,
        audit.report.n_quarantined,
        run_dir.display()
    );
    Ok(RunOutcome {
        run_dir,
        manifest,
        report: audit.report,
    })
}

pub fn load_manifest(run_dir: &Path) -> Result<RunManifest, HarnessError> {
    let path = if run_dir.is_dir() { run_dir.join(MANIFEST_FILE) } else { run_dir.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(json_err(&path))
}

pub fn load_report(run_dir: &Path) -> Result<AuditReport, HarnessError> {
    let path = run_dir.join(REPORT_JSON);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(json_err(&path))
}

pub fn load_records(run_dir: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let path = run_dir.join(RECORDS_FILE);
    let file = fs::File::open(&path).map_err(|e| HarnessError::io(&path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| HarnessError::io(&path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(json_err(&path))?);
        }
    }
    Ok(out)
}

impl RunConfig {
    /// The config stored in a manifest, switched to replay against the
    /// store it recorded.
    pub fn from_manifest(path: &Path) -> Result<Self, HarnessError> {
        let m = load_manifest(path)?;
        let mut cfg = m.config;
        if cfg.backend.replay_dir.is_none() {
            return Err(HarnessError::Config(format!(
                "{}: run has no replay store and cannot be replayed",
                path.display()
            )));
        }
        cfg.backend.mode = crate::gateway::GatewayMode::Replay;
        Ok(cfg)
    }
}
