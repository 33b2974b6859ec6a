//! Uniform access to generation backends.
//!
//! Two capabilities are exposed: text completion (every backend) and
//! per-step token distributions (synthetic, replay and local backends).
//! A [`Gateway`] wraps a backend in one of three modes:
//!
//! * `Live` forwards every call.
//! * `Record` serves stored responses and forwards and appends misses.
//! * `Replay` serves only stored responses; a miss is an error and the
//!   backend, if any, is never touched.

mod distribution;
pub mod http;
pub mod replay;
mod synthetic;

use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use distribution::{Candidate, DistributionError, TokenDistribution, TokenId, MAX_CANDIDATES};
pub use http::{HttpBackend, HttpEndpoint, Transport, TransportError, UreqTransport};
pub use replay::{ReplayKey, ReplayStore, Request, Response};
pub use synthetic::SyntheticBackend;

/// Candidate text that ends a generation.
pub const STOP_TEXT: &str = "</s>";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("replay miss for {kind} request (key {key})")]
    ReplayMiss { kind: &'static str, key: ReplayKey },
    #[error("backend {backend} does not support {capability}")]
    Unsupported { backend: String, capability: &'static str },
    #[error("replay store: {0}")]
    Store(String),
    #[error("corrupted replay entry {key}: {reason}")]
    Integrity { key: String, reason: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("no backend configured")]
    NoBackend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub sampling_enabled: bool,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: 0.01,
            sampling_enabled: false,
            max_new_tokens: 500,
            seed: 42,
        }
    }
}

impl GenerationConfig {
    pub fn with_max_new_tokens(&self, n: usize) -> Self {
        Self {
            max_new_tokens: n,
            ..self.clone()
        }
    }
}

pub trait Backend: Send + Sync {
    fn describe(&self) -> String;

    fn complete(&self, model: &str, prompt: &str, cfg: &GenerationConfig) -> Result<String, GatewayError>;

    fn encode(&self, _model: &str, _text: &str) -> Result<Vec<TokenId>, GatewayError> {
        Err(GatewayError::Unsupported {
            backend: self.describe(),
            capability: "token encoding",
        })
    }

    fn next_distribution(&self, _model: &str, _context: &[TokenId]) -> Result<TokenDistribution, GatewayError> {
        Err(GatewayError::Unsupported {
            backend: self.describe(),
            capability: "per-step token distributions",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
}

impl fmt::Display for GatewayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GatewayMode::Live => "live",
            GatewayMode::Record => "record",
            GatewayMode::Replay => "replay",
        })
    }
}

/// Shareable handle over a backend and an optional replay store.
pub struct Gateway {
    backend: Option<Arc<dyn Backend>>,
    store: Option<ReplayStore>,
    mode: GatewayMode,
    backend_calls: AtomicUsize,
}

impl Gateway {
    pub fn live(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend: Some(backend),
            store: None,
            mode: GatewayMode::Live,
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn record(backend: Arc<dyn Backend>, dir: &Path) -> Result<Self, GatewayError> {
        Ok(Self {
            backend: Some(backend),
            store: Some(ReplayStore::open_for_append(dir)?),
            mode: GatewayMode::Record,
            backend_calls: AtomicUsize::new(0),
        })
    }

    pub fn replay(dir: &Path) -> Result<Self, GatewayError> {
        Ok(Self {
            backend: None,
            store: Some(ReplayStore::open(dir)?),
            mode: GatewayMode::Replay,
            backend_calls: AtomicUsize::new(0),
        })
    }

    /// Replay mode that still holds a backend handle; the handle is never
    /// used.
    pub fn replay_with_backend(dir: &Path, backend: Arc<dyn Backend>) -> Result<Self, GatewayError> {
        let mut g = Self::replay(dir)?;
        g.backend = Some(backend);
        Ok(g)
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn store(&self) -> Option<&ReplayStore> {
        self.store.as_ref()
    }

    /// Number of calls forwarded to the backend so far.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn describe(&self) -> String {
        match &self.backend {
            Some(b) if self.mode != GatewayMode::Replay => format!("{}+{}", self.mode, b.describe()),
            _ => self.mode.to_string(),
        }
    }

    fn dispatch(
        &self,
        request: Request,
        call: impl FnOnce(&dyn Backend) -> Result<Response, GatewayError>,
    ) -> Result<Response, GatewayError> {
        if let Some(store) = &self.store {
            let key = request.key();
            if let Some(r) = store.get(&key) {
                return Ok(r);
            }
            if self.mode == GatewayMode::Replay {
                return Err(GatewayError::ReplayMiss {
                    kind: request.kind(),
                    key,
                });
            }
        }
        let backend = self.backend.as_deref().ok_or(GatewayError::NoBackend)?;
        self.backend_calls.fetch_add(1, Ordering::Relaxed);
        let response = call(backend)?;
        if let (Some(store), GatewayMode::Record) = (&self.store, self.mode) {
            store.insert(request, response.clone())?;
        }
        Ok(response)
    }

    pub fn complete(&self, model: &str, prompt: &str, cfg: &GenerationConfig) -> Result<String, GatewayError> {
        let req = Request::Complete {
            model: model.to_string(),
            prompt: prompt.to_string(),
            config: cfg.clone(),
        };
        match self.dispatch(req, |b| b.complete(model, prompt, cfg).map(Response::Text))? {
            Response::Text(t) => Ok(t),
            other => Err(GatewayError::Protocol(format!("expected text, got {other:?}"))),
        }
    }

    pub fn encode(&self, model: &str, text: &str) -> Result<Vec<TokenId>, GatewayError> {
        let req = Request::Encode {
            model: model.to_string(),
            text: text.to_string(),
        };
        match self.dispatch(req, |b| b.encode(model, text).map(Response::Tokens))? {
            Response::Tokens(t) => Ok(t),
            other => Err(GatewayError::Protocol(format!("expected tokens, got {other:?}"))),
        }
    }

    pub fn next_distribution(&self, model: &str, context: &[TokenId]) -> Result<TokenDistribution, GatewayError> {
        let req = Request::Distribution {
            model: model.to_string(),
            context: context.to_vec(),
        };
        match self.dispatch(req, |b| b.next_distribution(model, context).map(Response::Distribution))? {
            Response::Distribution(d) => Ok(d),
            other => Err(GatewayError::Protocol(format!("expected distribution, got {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    struct Echo;

    impl Backend for Echo {
        fn describe(&self) -> String {
            "echo".into()
        }
        fn complete(&self, _m: &str, prompt: &str, _c: &GenerationConfig) -> Result<String, GatewayError> {
            Ok(format!("echo:{prompt}"))
        }
    }

    struct Forbidden;

    impl Backend for Forbidden {
        fn describe(&self) -> String {
            "forbidden".into()
        }
        fn complete(&self, _: &str, _: &str, _: &GenerationConfig) -> Result<String, GatewayError> {
            panic!("backend used in replay mode")
        }
        fn next_distribution(&self, _: &str, _: &[TokenId]) -> Result<TokenDistribution, GatewayError> {
            panic!("backend used in replay mode")
        }
    }

    #[test]
    fn defaults_follow_generation_setup() {
        let c = GenerationConfig::default();
        assert_eq!(c.temperature, 0.01);
        assert!(!c.sampling_enabled);
        assert_eq!(c.max_new_tokens, 500);
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenerationConfig::default();
        let rec = Gateway::record(Arc::new(Echo), dir.path()).unwrap();
        assert_eq!(rec.complete("m", "P", &cfg).unwrap(), "echo:P");
        assert_eq!(rec.complete("m", "P", &cfg).unwrap(), "echo:P");
        assert_eq!(rec.backend_calls(), 1);
        drop(rec);

        let rep = Gateway::replay_with_backend(dir.path(), Arc::new(Forbidden)).unwrap();
        assert_eq!(rep.complete("m", "P", &cfg).unwrap(), "echo:P");
        assert!(matches!(
            rep.complete("m", "Q", &cfg),
            Err(GatewayError::ReplayMiss { kind: "complete", .. })
        ));
        assert!(matches!(
            rep.next_distribution("m", &[1, 2]),
            Err(GatewayError::ReplayMiss { kind: "distribution", .. })
        ));
        assert_eq!(rep.backend_calls(), 0);
    }

    #[test]
    fn config_is_part_of_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let rec = Gateway::record(Arc::new(Echo), dir.path()).unwrap();
        rec.complete("m", "P", &GenerationConfig::default()).unwrap();
        drop(rec);
        let rep = Gateway::replay(dir.path()).unwrap();
        assert!(rep.complete("m", "P", &GenerationConfig::default().with_max_new_tokens(300)).is_err());
        assert!(rep.complete("other", "P", &GenerationConfig::default()).is_err());
    }

    #[test]
    fn distribution_replay_identity() {
        let dir = tempfile::tempdir().unwrap();
        let backend = Arc::new(SyntheticBackend::from_logits(&[("a", 1.0), ("b", 0.0), ("c", -1.0)]));
        let rec = Gateway::record(backend, dir.path()).unwrap();
        let first = rec.next_distribution("m", &[0]).unwrap();
        drop(rec);
        let rep = Gateway::replay(dir.path()).unwrap();
        for _ in 0..3 {
            assert_eq!(rep.next_distribution("m", &[0]).unwrap(), first);
        }
    }

    #[test]
    fn chat_only_backend_rejects_distributions() {
        let g = Gateway::live(Arc::new(Echo));
        assert!(matches!(
            g.next_distribution("m", &[]),
            Err(GatewayError::Unsupported { .. })
        ));
    }

    #[test]
    fn corrupted_entry_names_key() {
        let dir = tempfile::tempdir().unwrap();
        let rec = Gateway::record(Arc::new(Echo), dir.path()).unwrap();
        rec.complete("m", "P", &GenerationConfig::default()).unwrap();
        drop(rec);
        let path = dir.path().join(replay::STORE_FILE);
        let content = std::fs::read_to_string(&path).unwrap();
        let tampered = content.replace("\"prompt\":\"P\"", "\"prompt\":\"Z\"");
        std::fs::write(&path, &tampered).unwrap();
        let key = serde_json::from_str::<serde_json::Value>(content.lines().next().unwrap()).unwrap()["key"]
            .as_str()
            .unwrap()
            .to_string();
        match Gateway::replay(dir.path()) {
            Err(GatewayError::Integrity { key: k, .. }) => assert_eq!(k, key),
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("tampered store accepted"),
        }

        let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
        std::fs::write(&path, &content).unwrap();
        writeln!(f, "{{garbage").unwrap();
        assert!(matches!(Gateway::replay(dir.path()), Err(GatewayError::Integrity { .. })));
    }

    #[test]
    fn replay_requires_existing_store() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Gateway::replay(dir.path()), Err(GatewayError::Store(_))));
    }
}
