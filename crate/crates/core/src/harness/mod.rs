//! Audit pipelines, run manifests and run-directory persistence.

mod config;
mod pipeline;
mod run;

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BackendConfig, BackendKind, DatasetConfig, JudgeConfig, ProviderConfig, ProviderKind, RunConfig};
pub use pipeline::{audit_factcheck, audit_summarization, load_inputs, Audit, Inputs};
pub use run::{load_manifest, load_records, load_report, run_audit, write_reports, RunOutcome, MANIFEST_FILE, RECORDS_FILE};

use crate::corpus::{CorpusError, Horizon};
use crate::decoding::ProcessorSpec;
use crate::embedding::EmbeddingError;
use crate::gateway::{GatewayError, GatewayMode};
use crate::judge::{CalibrationMode, FramingLabel};
use crate::metrics::{CoverageTriple, MetricsError};
use crate::strategies::{FactcheckOutcome, Stage, Strategy, StrategyError, Task};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("strategy knowledge_boundary needs a knowledge cutoff date")]
    MissingCutoff,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("input set is empty")]
    EmptyInput,
    #[error("report failed its consistency check: {0}")]
    Inconsistent(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::MissingCutoff => "missing_cutoff",
            HarnessError::Io { .. } => "io",
            HarnessError::Corpus(_) => "corpus",
            HarnessError::Gateway(_) => "gateway",
            HarnessError::Embedding(_) => "embedding",
            HarnessError::Strategy(_) => "strategy",
            HarnessError::Metrics(_) => "metrics",
            HarnessError::Json { .. } => "json",
            HarnessError::Csv(_) => "csv",
            HarnessError::EmptyInput => "empty_input",
            HarnessError::Inconsistent(_) => "inconsistent_report",
            HarnessError::Pool(_) => "pool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub id: String,
    pub path: PathBuf,
    /// SHA-256 of the dataset file.
    pub sha256: String,
    pub source: String,
    pub seed: u64,
    pub sample_size: usize,
    pub max_tokens: usize,
    pub n_loaded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    pub task: Task,
    pub model: String,
    pub dataset: DatasetInfo,
    pub strategy: Strategy,
    /// Resolved processor chain (empty outside the decode family).
    pub processors: Vec<ProcessorSpec>,
    pub judge_model: Option<String>,
    pub judge_mode: Option<CalibrationMode>,
    pub embedding_provider: Option<String>,
    pub salience_provider: Option<String>,
    pub gateway: String,
    pub gateway_mode: GatewayMode,
    pub replay_dir: Option<PathBuf>,
    pub backend_calls: usize,
    pub config: RunConfig,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunRecord {
    Document {
        run_id: String,
        doc_id: String,
        summary: String,
        stages: Vec<Stage>,
        flags: Vec<String>,
        context_label: Option<FramingLabel>,
        summary_label: Option<FramingLabel>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        judge_error: Option<String>,
        coverage: CoverageTriple,
    },
    Pair {
        run_id: String,
        pair_id: String,
        horizon: Horizon,
        outcome: FactcheckOutcome,
        /// False when the pair was excluded from scoring.
        scored: bool,
    },
    Quarantined {
        run_id: String,
        item_id: String,
        stage: String,
        reason: String,
    },
}

impl RunRecord {
    pub fn run_id(&self) -> &str {
        match self {
            RunRecord::Document { run_id, .. } | RunRecord::Pair { run_id, .. } | RunRecord::Quarantined { run_id, .. } => {
                run_id
            }
        }
    }

    pub fn is_quarantined(&self) -> bool {
        matches!(self, RunRecord::Quarantined { .. } | RunRecord::Pair { scored: false, .. })
    }
}
