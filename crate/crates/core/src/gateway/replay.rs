use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GatewayError, GenerationConfig, TokenDistribution, TokenId};

pub const STORE_FILE: &str = "replay.jsonl";

/// Everything that determines a backend response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Request {
    Complete {
        model: String,
        prompt: String,
        config: GenerationConfig,
    },
    Encode {
        model: String,
        text: String,
    },
    Distribution {
        model: String,
        context: Vec<TokenId>,
    },
}

impl Request {
    pub fn kind(&self) -> &'static str {
        match self {
            Request::Complete { .. } => "complete",
            Request::Encode { .. } => "encode",
            Request::Distribution { .. } => "distribution",
        }
    }

    pub fn key(&self) -> ReplayKey {
        let canonical = serde_json::to_string(self).expect("request serializes");
        ReplayKey(hex::encode(Sha256::digest(canonical.as_bytes())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Response {
    Text(String),
    Tokens(Vec<TokenId>),
    Distribution(TokenDistribution),
}

/// SHA-256 of the canonical JSON request (full prompt included).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplayKey(pub String);

impl std::fmt::Display for ReplayKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    key: ReplayKey,
    request: Request,
    response: Response,
}

/// Append-only store of `(key, request, response)` lines. Reads are
/// concurrent; appends go through a single writer.
pub struct ReplayStore {
    path: PathBuf,
    entries: RwLock<HashMap<ReplayKey, Response>>,
    writer: Mutex<Option<File>>,
}

impl ReplayStore {
    /// Opens an existing store read-only.
    pub fn open(dir: &Path) -> Result<Self, GatewayError> {
        let path = dir.join(STORE_FILE);
        if !path.exists() {
            return Err(GatewayError::Store(format!("no replay store at {}", path.display())));
        }
        let entries = Self::load(&path)?;
        Ok(Self {
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(None),
        })
    }

    /// Opens (or creates) a store for appending.
    pub fn open_for_append(dir: &Path) -> Result<Self, GatewayError> {
        fs::create_dir_all(dir).map_err(|e| GatewayError::Store(format!("{}: {e}", dir.display())))?;
        let path = dir.join(STORE_FILE);
        let entries = if path.exists() { Self::load(&path)? } else { HashMap::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| GatewayError::Store(format!("{}: {e}", path.display())))?;
        Ok(Self {
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    fn load(path: &Path) -> Result<HashMap<ReplayKey, Response>, GatewayError> {
        let file = File::open(path).map_err(|e| GatewayError::Store(format!("{}: {e}", path.display())))?;
        let mut map = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| GatewayError::Store(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| GatewayError::Integrity {
                key: format!("<line {}>", i + 1),
                reason: e.to_string(),
            })?;
            let key = value
                .get("key")
                .and_then(|k| k.as_str())
                .map(str::to_string)
                .unwrap_or_else(|| format!("<line {}>", i + 1));
            let entry: Entry = serde_json::from_value(value).map_err(|e| GatewayError::Integrity {
                key: key.clone(),
                reason: e.to_string(),
            })?;
            if entry.request.key() != entry.key {
                return Err(GatewayError::Integrity {
                    key,
                    reason: "stored key does not match the request hash".into(),
                });
            }
            let kind_ok = matches!(
                (&entry.request, &entry.response),
                (Request::Complete { .. }, Response::Text(_))
                    | (Request::Encode { .. }, Response::Tokens(_))
                    | (Request::Distribution { .. }, Response::Distribution(_))
            );
            if !kind_ok {
                return Err(GatewayError::Integrity {
                    key,
                    reason: format!("response type does not match {} request", entry.request.kind()),
                });
            }
            map.entry(entry.key).or_insert(entry.response);
        }
        Ok(map)
    }

    pub fn get(&self, key: &ReplayKey) -> Option<Response> {
        self.entries.read().get(key).cloned()
    }

    pub fn insert(&self, request: Request, response: Response) -> Result<(), GatewayError> {
        let key = request.key();
        let mut writer = self.writer.lock();
        let file = writer
            .as_mut()
            .ok_or_else(|| GatewayError::Store("replay store is read-only".into()))?;
        if self.entries.read().contains_key(&key) {
            return Ok(());
        }
        let entry = Entry {
            key: key.clone(),
            request,
            response,
        };
        let line = serde_json::to_string(&entry).expect("entry serializes");
        writeln!(file, "{line}")
            .and_then(|_| file.flush())
            .map_err(|e| GatewayError::Store(format!("{}: {e}", self.path.display())))?;
        self.entries.write().insert(key, entry.response);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn keys(&self) -> Vec<ReplayKey> {
        let mut k: Vec<_> = self.entries.read().keys().cloned().collect();
        k.sort();
        k
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
