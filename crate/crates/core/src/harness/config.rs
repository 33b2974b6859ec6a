use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::corpus::{Cutoff, Source};
use crate::decoding::ProcessorSpec;
use crate::embedding::{Embedder, EmbeddingError, EmbeddingProvider, HashingProvider, HttpEmbeddingProvider, Vector};
use crate::gateway::{Backend, Gateway, GatewayMode, GenerationConfig, HttpBackend, HttpEndpoint, SyntheticBackend, UreqTransport};
use crate::judge::CalibrationMode;
use crate::metrics::DEFAULT_ALPHA;
use crate::strategies::{FailedVerdicts, Strategy, SummarizerOptions, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// OpenAI-compatible HTTP endpoint.
    #[default]
    Http,
    /// Built-in toy language model; offline.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub mode: GatewayMode,
    pub kind: BackendKind,
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub replay_dir: Option<PathBuf>,
    pub timeout_secs: u64,
    pub retries: u32,
    pub synthetic_seed: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            mode: GatewayMode::Replay,
            kind: BackendKind::Http,
            base_url: None,
            api_key_env: None,
            replay_dir: None,
            timeout_secs: 120,
            retries: 3,
            synthetic_seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Hashing,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub dimension: usize,
    pub model: Option<String>,
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Hashing,
            dimension: 4096,
            model: None,
            base_url: None,
            api_key_env: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    /// Defaults to the audited model.
    pub model: Option<String>,
    pub mode: CalibrationMode,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            model: None,
            mode: CalibrationMode::Rating,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub id: String,
    pub path: PathBuf,
    pub source: Source,
    pub sample_size: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            id: String::new(),
            path: PathBuf::new(),
            source: Source::Custom,
            sample_size: 1000,
            max_tokens: 4000,
            seed: 42,
        }
    }
}

/// Everything an audit run depends on. Loaded from TOML; secrets are only
/// ever named (`api_key_env`), never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub model: String,
    pub strategy: Strategy,
    /// Overrides the strategy's default processor chain.
    pub processors: Option<Vec<ProcessorSpec>>,
    pub alpha: f64,
    /// `YYYY-MM` or `YYYY-MM-DD`.
    pub cutoff: Option<String>,
    pub failed_verdicts: FailedVerdicts,
    pub summary_budget: usize,
    pub shuffle_seed: u64,
    pub attention_iterations: usize,
    pub factcheck_max_new_tokens: usize,
    pub generation: GenerationConfig,
    pub parallelism: usize,
    pub backend: BackendConfig,
    pub judge: JudgeConfig,
    pub provider: ProviderConfig,
    pub dataset: DatasetConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let opts = SummarizerOptions::default();
        Self {
            task: Task::Summarization,
            model: String::new(),
            strategy: Strategy::Baseline,
            processors: None,
            alpha: DEFAULT_ALPHA,
            cutoff: None,
            failed_verdicts: FailedVerdicts::Incorrect,
            summary_budget: opts.summary_budget,
            shuffle_seed: opts.shuffle_seed,
            attention_iterations: opts.attention_iterations,
            factcheck_max_new_tokens: 16,
            generation: GenerationConfig::default(),
            parallelism: 4,
            backend: BackendConfig::default(),
            judge: JudgeConfig::default(),
            provider: ProviderConfig::default(),
            dataset: DatasetConfig::default(),
        }
    }
}

/// Fields of the config that determine results. Backend mode, replay
/// location and parallelism are excluded so a recorded run and its replay
/// share an id.
#[derive(Serialize)]
struct Identity<'a> {
    task: Task,
    model: &'a str,
    strategy: Strategy,
    processors: &'a Option<Vec<ProcessorSpec>>,
    alpha: f64,
    cutoff: &'a Option<String>,
    failed_verdicts: FailedVerdicts,
    summary_budget: usize,
    shuffle_seed: u64,
    attention_iterations: usize,
    factcheck_max_new_tokens: usize,
    generation: &'a GenerationConfig,
    judge_model: &'a str,
    judge_mode: CalibrationMode,
    provider: &'a ProviderConfig,
    dataset_id: &'a str,
    dataset_source: Source,
    sample_size: usize,
    max_tokens: usize,
    dataset_seed: u64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads a TOML config; relative dataset and replay paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset.path = resolve_against(base, &cfg.dataset.path);
        cfg.backend.replay_dir = cfg.backend.replay_dir.as_deref().map(|p| resolve_against(base, p));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn judge_model(&self) -> &str {
        self.judge.model.as_deref().unwrap_or(&self.model)
    }

    pub fn cutoff(&self) -> Result<Option<Cutoff>, HarnessError> {
        self.cutoff
            .as_deref()
            .map(|c| c.parse().map_err(|e: String| HarnessError::Config(format!("cutoff: {e}"))))
            .transpose()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.model.trim().is_empty() {
            return bad("model is required".into());
        }
        if self.dataset.path.as_os_str().is_empty() {
            return bad("dataset.path is required".into());
        }
        if !self.strategy.supports(self.task) {
            return bad(format!("strategy {} does not apply to {:?}", self.strategy, self.task));
        }
        if self.strategy == Strategy::KnowledgeBoundary && self.cutoff.is_none() {
            return Err(HarnessError::MissingCutoff);
        }
        self.cutoff()?;
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be a nonnegative number, got {}", self.alpha));
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if self.processors.is_some() && self.strategy.processor().is_none() {
            return bad(format!("strategy {} takes no processors", self.strategy));
        }
        if self.backend.mode != GatewayMode::Live && self.backend.replay_dir.is_none() {
            return bad(format!("backend.replay_dir is required in {} mode", self.backend.mode));
        }
        Ok(())
    }

    pub fn dataset_id(&self) -> String {
        if self.dataset.id.is_empty() {
            self.dataset
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        } else {
            self.dataset.id.clone()
        }
    }

    /// First 16 hex digits of SHA-256 over the result-determining fields.
    pub fn run_id(&self) -> String {
        let dataset_id = self.dataset_id();
        let id = Identity {
            task: self.task,
            model: &self.model,
            strategy: self.strategy,
            processors: &self.processors,
            alpha: self.alpha,
            cutoff: &self.cutoff,
            failed_verdicts: self.failed_verdicts,
            summary_budget: self.summary_budget,
            shuffle_seed: self.shuffle_seed,
            attention_iterations: self.attention_iterations,
            factcheck_max_new_tokens: self.factcheck_max_new_tokens,
            generation: &self.generation,
            judge_model: self.judge_model(),
            judge_mode: self.judge.mode,
            provider: &self.provider,
            dataset_id: &dataset_id,
            dataset_source: self.dataset.source,
            sample_size: self.dataset.sample_size,
            max_tokens: self.dataset.max_tokens,
            dataset_seed: self.dataset.seed,
        };
        let bytes = serde_json::to_vec(&id).expect("identity serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn summarizer_options(&self) -> SummarizerOptions {
        SummarizerOptions {
            config: self.generation.clone(),
            summary_budget: self.summary_budget,
            shuffle_seed: self.shuffle_seed,
            attention_iterations: self.attention_iterations,
            processors: self.processors.clone(),
            ..SummarizerOptions::default()
        }
    }

    fn api_key(env: &Option<String>) -> Result<Option<String>, HarnessError> {
        match env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| HarnessError::Config(format!("environment variable {var} is not set"))),
        }
    }

    fn endpoint(&self, base_url: &Option<String>, key_env: &Option<String>) -> Result<HttpEndpoint, HarnessError> {
        let url = base_url
            .as_deref()
            .ok_or_else(|| HarnessError::Config("base_url is required for the http backend".into()))?;
        let transport = Arc::new(UreqTransport::new(Duration::from_secs(self.backend.timeout_secs)));
        Ok(HttpEndpoint::new(url, transport)
            .with_api_key(Self::api_key(key_env)?)
            .with_backoff(self.backend.retries, Duration::from_millis(500)))
    }

    fn backend(&self) -> Result<Arc<dyn Backend>, HarnessError> {
        Ok(match self.backend.kind {
            BackendKind::Synthetic => Arc::new(SyntheticBackend::demo(self.backend.synthetic_seed)),
            BackendKind::Http => Arc::new(HttpBackend::new(
                self.endpoint(&self.backend.base_url, &self.backend.api_key_env)?,
            )),
        })
    }

    pub fn gateway(&self) -> Result<Gateway, HarnessError> {
        let dir = || {
            self.backend
                .replay_dir
                .as_deref()
                .ok_or_else(|| HarnessError::Config("backend.replay_dir is required".into()))
        };
        Ok(match self.backend.mode {
            GatewayMode::Live => Gateway::live(self.backend()?),
            GatewayMode::Record => Gateway::record(self.backend()?, dir()?)?,
            GatewayMode::Replay => Gateway::replay(dir()?)?,
        })
    }

    /// Embedding front end. Outside live mode vectors are cached next to
    /// the replay store; in replay mode a remote provider is never called.
    pub fn embedder(&self) -> Result<Embedder, HarnessError> {
        let p = &self.provider;
        let provider: Arc<dyn EmbeddingProvider> = match p.kind {
            ProviderKind::Hashing => Arc::new(HashingProvider::new(p.dimension)),
            ProviderKind::Http => {
                let model = p
                    .model
                    .as_deref()
                    .ok_or_else(|| HarnessError::Config("provider.model is required for http embeddings".into()))?;
                if self.backend.mode == GatewayMode::Replay {
                    Arc::new(Offline {
                        id: format!("http:{model}"),
                        dimension: p.dimension,
                    })
                } else {
                    let base = p.base_url.clone().or_else(|| self.backend.base_url.clone());
                    let key = p.api_key_env.clone().or_else(|| self.backend.api_key_env.clone());
                    Arc::new(HttpEmbeddingProvider::new(self.endpoint(&base, &key)?, model, p.dimension))
                }
            }
        };
        match (&self.backend.replay_dir, p.kind) {
            (Some(dir), ProviderKind::Http) if self.backend.mode != GatewayMode::Live => {
                std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
                Ok(Embedder::persistent(provider, &dir.join(crate::embedding::EMBEDDING_CACHE_FILE))?)
            }
            _ => Ok(Embedder::new(provider)),
        }
    }
}

/// Stand-in for a remote provider during replay: every cache miss fails.
struct Offline {
    id: String,
    dimension: usize,
}

impl EmbeddingProvider for Offline {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_uncached(&self, _text: &str) -> Result<Vector, EmbeddingError> {
        Err(EmbeddingError::Provider("replay mode: embedding not in cache".into()))
    }
}


fn resolve_against(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() || p.as_os_str().is_empty() {
        p.to_path_buf()
    } else if p == Path::new(".") {
        base.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig::from_toml(
            r#"
model = "m"
strategy = "baseline"
[backend]
mode = "replay"
replay_dir = "fixtures/amz50/replay"
[dataset]
id = "amz50"
path = "fixtures/amz50/corpus.jsonl"
source = "amazon_reviews"
"#,
        )
        .unwrap()
    }

    #[test]
    fn toml_defaults_and_round_trip() {
        let c = base();
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.generation.max_new_tokens, 500);
        assert_eq!(c.judge_model(), "m");
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("modle = \"x\"").is_err());
    }

    #[test]
    fn run_id_ignores_transport_details() {
        let a = base();
        let mut b = a.clone();
        b.backend.mode = GatewayMode::Record;
        b.backend.replay_dir = Some("elsewhere".into());
        b.parallelism = 16;
        assert_eq!(a.run_id(), b.run_id());
        b.strategy = Strategy::Cloze;
        assert_ne!(a.run_id(), b.run_id());
        assert_eq!(a.run_id().len(), 16);
    }

    #[test]
    fn knowledge_boundary_needs_cutoff() {
        let mut c = base();
        c.task = Task::FactCheck;
        c.strategy = Strategy::KnowledgeBoundary;
        assert!(matches!(c.validate(), Err(HarnessError::MissingCutoff)));
        c.cutoff = Some("2023-03".into());
        c.validate().unwrap();
        c.cutoff = Some("March".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn task_strategy_mismatch() {
        let mut c = base();
        c.strategy = Strategy::EpistemicTagging;
        assert!(c.validate().is_err());
    }
}
