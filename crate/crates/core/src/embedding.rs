//! Embeddings, cosine similarity and TF-IDF.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::gateway::{HttpEndpoint, TransportError};
use crate::text;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite component in embedding")]
    NonFinite,
    #[error("embedding provider unreachable: {0}")]
    Provider(String),
    #[error("embedding cache: {0}")]
    Cache(String),
    #[error("TF-IDF needs at least one nonempty text")]
    EmptyCorpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(components: Vec<f64>) -> Result<Self, EmbeddingError> {
        if components.iter().any(|c| !c.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self(components))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self(self.0.iter().map(|c| c * k).collect())
    }

    fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// `a·b / (‖a‖‖b‖)`, clamped to [-1, 1].
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64, EmbeddingError> {
    if a.dimension() != b.dimension() {
        return Err(EmbeddingError::DimensionMismatch(a.dimension(), b.dimension()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier, used as the cache namespace and in manifests.
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed_uncached(&self, text: &str) -> Result<Vector, EmbeddingError>;
}

/// Feature-hashing bag of words: each lowercased alphanumeric term adds 1
/// to component `fnv1a64(term) mod dimension`. Deterministic and offline;
/// texts without shared terms are orthogonal unless two terms collide.
#[derive(Debug, Clone)]
pub struct HashingProvider {
    dimension: usize,
}

impl HashingProvider {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { dimension }
    }

    pub fn bucket(&self, term: &str) -> usize {
        (fnv1a64(term.as_bytes()) % self.dimension as u64) as usize
    }
}

impl Default for HashingProvider {
    fn default() -> Self {
        Self::new(4096)
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl EmbeddingProvider for HashingProvider {
    fn id(&self) -> String {
        format!("hashing-{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_uncached(&self, text: &str) -> Result<Vector, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let mut v = vec![0.0; self.dimension];
        for t in text::terms(text) {
            v[self.bucket(&t)] += 1.0;
        }
        Vector::new(v)
    }
}

/// OpenAI-compatible `/embeddings` endpoint.
pub struct HttpEmbeddingProvider {
    endpoint: HttpEndpoint,
    model: String,
    dimension: usize,
}

impl HttpEmbeddingProvider {
    pub fn new(endpoint: HttpEndpoint, model: &str, dimension: usize) -> Self {
        Self {
            endpoint,
            model: model.to_string(),
            dimension,
        }
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_uncached(&self, text: &str) -> Result<Vector, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let body = json!({"model": self.model, "input": text});
        let resp = self.endpoint.post("embeddings", &body).map_err(|e| match e {
            TransportError::Status { status, body } => EmbeddingError::Provider(format!("HTTP {status}: {body}")),
            TransportError::Network(m) => EmbeddingError::Provider(m),
        })?;
        let comps: Vec<f64> = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbeddingError::Provider(format!("no data[0].embedding in {resp}")))?
            .iter()
            .map(|v| v.as_f64().ok_or(EmbeddingError::NonFinite))
            .collect::<Result<_, _>>()?;
        if comps.len() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch(comps.len(), self.dimension));
        }
        Vector::new(comps)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    provider: String,
    text: String,
    vector: Vector,
}

/// Caching front for a provider. Reads are concurrent, inserts exclusive;
/// with a cache file every new vector is appended to it.
pub struct Embedder {
    provider: Arc<dyn EmbeddingProvider>,
    cache: RwLock<HashMap<String, Vector>>,
    file: Option<(PathBuf, Mutex<File>)>,
}

pub const EMBEDDING_CACHE_FILE: &str = "embeddings.jsonl";

impl Embedder {
    pub fn new(provider: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            provider,
            cache: RwLock::new(HashMap::new()),
            file: None,
        }
    }

    /// Loads `path` (if present) and appends new vectors to it.
    pub fn persistent(provider: Arc<dyn EmbeddingProvider>, path: &Path) -> Result<Self, EmbeddingError> {
        let err = |e: std::io::Error| EmbeddingError::Cache(format!("{}: {e}", path.display()));
        let pid = provider.id();
        let mut cache = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path).map_err(err)?).lines().enumerate() {
                let line = line.map_err(err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheLine = serde_json::from_str(&line)
                    .map_err(|e| EmbeddingError::Cache(format!("{}:{}: {e}", path.display(), i + 1)))?;
                if rec.provider == pid {
                    cache.insert(rec.text, rec.vector);
                }
            }
        }
        let f = OpenOptions::new().create(true).append(true).open(path).map_err(err)?;
        Ok(Self {
            provider,
            cache: RwLock::new(cache),
            file: Some((path.to_path_buf(), Mutex::new(f))),
        })
    }

    pub fn provider_id(&self) -> String {
        self.provider.id()
    }

    pub fn dimension(&self) -> usize {
        self.provider.dimension()
    }

    pub fn cached_len(&self) -> usize {
        self.cache.read().len()
    }

    pub fn embed(&self, text: &str) -> Result<Vector, EmbeddingError> {
        if let Some(v) = self.cache.read().get(text) {
            return Ok(v.clone());
        }
        let v = self.provider.embed_uncached(text)?;
        if v.dimension() != self.provider.dimension() {
            return Err(EmbeddingError::DimensionMismatch(v.dimension(), self.provider.dimension()));
        }
        let mut cache = self.cache.write();
        if !cache.contains_key(text) {
            if let Some((path, f)) = &self.file {
                let line = serde_json::to_string(&CacheLine {
                    provider: self.provider.id(),
                    text: text.to_string(),
                    vector: v.clone(),
                })
                .expect("cache line serializes");
                writeln!(f.lock(), "{line}").map_err(|e| EmbeddingError::Cache(format!("{}: {e}", path.display())))?;
            }
            cache.insert(text.to_string(), v.clone());
        }
        Ok(v)
    }
}

/// Sparse vector keyed by vocabulary index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector(BTreeMap<usize, f64>);

impl SparseVector {
    pub fn is_zero(&self) -> bool {
        self.0.values().all(|v| *v == 0.0)
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0.get(&index).copied().unwrap_or(0.0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }

    fn norm(&self) -> f64 {
        self.0.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; `None` when either side is the zero vector.
    pub fn cosine(&self, other: &SparseVector) -> Option<f64> {
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return None;
        }
        let (small, large) = if self.0.len() <= other.0.len() { (self, other) } else { (other, self) };
        let dot: f64 = small.0.iter().map(|(k, v)| v * large.get(*k)).sum();
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

/// TF-IDF with raw term counts and smoothed idf `ln((1+N)/(1+df)) + 1`
/// over lowercased, punctuation-stripped terms.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfModel {
    vocabulary: HashMap<String, usize>,
    idf: Vec<f64>,
    pub fitted_on: String,
}

impl TfIdfModel {
    pub fn fit<S: AsRef<str>>(texts: &[S], corpus_id: &str) -> Result<Self, EmbeddingError> {
        let docs: Vec<Vec<String>> = texts.iter().map(|t| text::terms(t.as_ref())).collect();
        if docs.iter().all(Vec::is_empty) {
            return Err(EmbeddingError::EmptyCorpus);
        }
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for d in &docs {
            let mut uniq: Vec<&str> = d.iter().map(String::as_str).collect();
            uniq.sort_unstable();
            uniq.dedup();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let mut vocabulary = HashMap::with_capacity(df.len());
        let mut idf = Vec::with_capacity(df.len());
        for (i, (term, count)) in df.into_iter().enumerate() {
            vocabulary.insert(term.to_string(), i);
            idf.push(((1.0 + n) / (1.0 + count as f64)).ln() + 1.0);
        }
        Ok(Self {
            vocabulary,
            idf,
            fitted_on: corpus_id.to_string(),
        })
    }

    pub fn vocabulary_len(&self) -> usize {
        self.idf.len()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.vocabulary.get(term).copied()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.index_of(term).map(|i| self.idf[i])
    }

    pub fn term(&self, index: usize) -> Option<&str> {
        self.vocabulary.iter().find(|(_, i)| **i == index).map(|(t, _)| t.as_str())
    }

    /// Out-of-vocabulary text yields the zero vector (see [`SparseVector::is_zero`]).
    pub fn vector(&self, text: &str) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in text::terms(text) {
            if let Some(&i) = self.vocabulary.get(&t) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        SparseVector(counts.into_iter().map(|(i, tf)| (i, tf * self.idf[i])).collect())
    }

    /// Highest-weighted terms of `text`, ties broken alphabetically.
    pub fn top_terms(&self, text: &str, k: usize) -> Vec<String> {
        let v = self.vector(text);
        let mut by_index: HashMap<usize, &str> = HashMap::new();
        for (t, i) in &self.vocabulary {
            by_index.insert(*i, t);
        }
        let mut scored: Vec<(f64, &str)> = v.entries().map(|(i, w)| (w, by_index[&i])).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        scored.into_iter().take(k).map(|(_, t)| t.to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn v(c: &[f64]) -> Vector {
        Vector::new(c.to_vec()).unwrap()
    }

    #[test]
    fn cosine_closed_forms() {
        assert!((cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(EmbeddingError::ZeroVector)));
        assert!(matches!(
            cosine(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(EmbeddingError::DimensionMismatch(1, 2))
        ));
        assert!(Vector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn hashing_provider_contract() {
        let p = HashingProvider::new(64);
        let a = p.embed_uncached("Great battery life").unwrap();
        assert_eq!(a, p.embed_uncached("Great battery life").unwrap());
        assert_eq!(a.dimension(), 64);
        assert_eq!(p.embed_uncached("x y z").unwrap().dimension(), 64);
        assert!(matches!(p.embed_uncached("  "), Err(EmbeddingError::EmptyText)));
    }

    struct Counting {
        inner: HashingProvider,
        calls: AtomicUsize,
    }

    impl EmbeddingProvider for Counting {
        fn id(&self) -> String {
            "counting".into()
        }
        fn dimension(&self) -> usize {
            self.inner.dimension()
        }
        fn embed_uncached(&self, text: &str) -> Result<Vector, EmbeddingError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.embed_uncached(text)
        }
    }

    #[test]
    fn cache_is_transparent_and_persistent() {
        let counting = Arc::new(Counting {
            inner: HashingProvider::new(32),
            calls: AtomicUsize::new(0),
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(EMBEDDING_CACHE_FILE);
        let e = Embedder::persistent(counting.clone(), &path).unwrap();
        let first = e.embed("hello world").unwrap();
        let second = e.embed("hello world").unwrap();
        assert_eq!(first, second);
        assert_eq!(first, counting.inner.embed_uncached("hello world").unwrap());
        assert_eq!(counting.calls.load(Ordering::SeqCst), 1);
        drop(e);
        let reopened = Embedder::persistent(counting.clone(), &path).unwrap();
        assert_eq!(reopened.embed("hello world").unwrap(), first);
        assert_eq!(counting.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn tfidf_examples() {
        let m = TfIdfModel::fit(&["a b", "a c"], "t").unwrap();
        assert!(m.idf("a").unwrap() < m.idf("b").unwrap());
        assert!((m.idf("a").unwrap() - 1.0).abs() < 1e-12);
        assert!((m.idf("b").unwrap() - ((3.0f64 / 2.0).ln() + 1.0)).abs() < 1e-12);

        let m = TfIdfModel::fit(&["red apples ripen", "blue ocean waves"], "t").unwrap();
        let x = m.vector("red apples ripen");
        assert!((x.cosine(&m.vector("red apples ripen")).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(x.cosine(&m.vector("blue ocean waves")).unwrap(), 0.0);
        assert!(m.vector("nothing known here").is_zero());
        assert!(matches!(TfIdfModel::fit(&["", "!!"], "t"), Err(EmbeddingError::EmptyCorpus)));
    }

    #[test]
    fn top_terms_rank_by_weight() {
        let m = TfIdfModel::fit(&["battery battery screen common", "common price", "common"], "t").unwrap();
        assert_eq!(m.top_terms("battery battery screen common", 2), ["battery", "screen"]);
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..20).prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant((a, b) in vec_pair(), k in 0.01f64..100.0) {
            let (a, b) = (v(&a), v(&b));
            if let (Ok(ab), Ok(ba)) = (cosine(&a, &b), cosine(&b, &a)) {
                prop_assert!((ab - ba).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&ab));
                let scaled = cosine(&a.scaled(k), &b).unwrap();
                prop_assert!((scaled - ab).abs() < 1e-9);
            }
        }
    }
}
