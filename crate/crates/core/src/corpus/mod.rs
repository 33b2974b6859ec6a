//! Dataset ingestion: length filtering, seeded sampling, segmentation into
//! thirds, and construction of true/falsified news pairs.

mod negate;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::text::{self, Tokenizer};

pub use negate::{negate, ModelNegator, NegateError, Negator, RuleNegator};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: duplicate document id {id:?}")]
    DuplicateId { path: PathBuf, id: String },
    #[error("no eligible documents (all {total} exceed {max_tokens} tokens)")]
    NoEligible { total: usize, max_tokens: usize },
    #[error("max_tokens must be positive")]
    ZeroMaxTokens,
    #[error("document {id} has {units} segmentation units; at least {needed} are required")]
    TooShort {
        id: String,
        units: usize,
        needed: usize,
    },
    #[error("document {id} has no event date")]
    MissingDate { id: String },
    #[error("document {id}: unparseable date {value:?}")]
    BadDate { id: String, value: String },
    #[error("document {id}: {source}")]
    Negation {
        id: String,
        #[source]
        source: NegateError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    AmazonReviews,
    Mediasum,
    NewsPre,
    NewsPost,
    Custom,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::AmazonReviews => "amazon_reviews",
            Source::Mediasum => "mediasum",
            Source::NewsPre => "news_pre",
            Source::NewsPost => "news_post",
            Source::Custom => "custom",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "amazon_reviews" | "amazon" => Source::AmazonReviews,
            "mediasum" => Source::Mediasum,
            "news_pre" => Source::NewsPre,
            "news_post" => Source::NewsPost,
            "custom" => Source::Custom,
            other => return Err(format!("unknown source {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub token_count: usize,
    pub source: Source,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, source: Source, tokenizer: &dyn Tokenizer) -> Self {
        let text = text.into();
        Self {
            id: id.into(),
            token_count: tokenizer.count(&text),
            text,
            source,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: serde_json::Value,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    dialogue: Option<Vec<Utterance>>,
    #[serde(default)]
    date: Option<String>,
    #[serde(default)]
    rating: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct Utterance {
    speaker: String,
    utterance: String,
}

/// Record layout written by [`write_corpus`]; readable by [`load_corpus`].
#[derive(Debug, Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    date: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rating: Option<&'a str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub source: Source,
    pub max_tokens: usize,
    pub sample_size: usize,
    pub seed: u64,
}

impl LoadOptions {
    /// 4000-token filter, 1000-document sample.
    pub fn new(source: Source) -> Self {
        Self {
            source,
            max_tokens: 4000,
            sample_size: 1000,
            seed: 42,
        }
    }
}

/// Reads one JSON record per line (`{id, text | dialogue, date?, rating?}`),
/// drops documents over `max_tokens`, and draws a seeded sample. The sample
/// is returned in file order.
pub fn load_corpus(
    path: &Path,
    opts: &LoadOptions,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Document>, CorpusError> {
    if opts.max_tokens == 0 {
        return Err(CorpusError::ZeroMaxTokens);
    }
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let id = match raw.id {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(malformed(format!("id must be a string or number, got {other}"))),
        };
        let text = match (raw.text, raw.dialogue) {
            (Some(t), _) => t,
            (None, Some(turns)) => linearize_dialogue(&turns),
            (None, None) => return Err(malformed("record has neither text nor dialogue".into())),
        };
        if text.trim().is_empty() {
            return Err(malformed("empty text".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                id,
            });
        }
        let mut doc = Document::new(id, text, opts.source, tokenizer);
        if let Some(d) = raw.date {
            doc.meta.insert("date".into(), d);
        }
        if let Some(r) = raw.rating {
            let r = match r {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            doc.meta.insert("rating".into(), r);
        }
        docs.push(doc);
    }
    let total = docs.len();
    let eligible: Vec<Document> = docs
        .into_iter()
        .filter(|d| d.token_count <= opts.max_tokens)
        .collect();
    if eligible.is_empty() {
        return Err(CorpusError::NoEligible {
            total,
            max_tokens: opts.max_tokens,
        });
    }
    Ok(sample(eligible, opts.sample_size, opts.seed))
}

fn linearize_dialogue(turns: &[Utterance]) -> String {
    turns
        .iter()
        .map(|t| format!("{}: {}", t.speaker, t.utterance))
        .collect::<Vec<_>>()
        .join("\n")
}

fn sample(docs: Vec<Document>, k: usize, seed: u64) -> Vec<Document> {
    if k >= docs.len() {
        return docs;
    }
    let mut picked = rng::permutation(docs.len(), seed);
    picked.truncate(k);
    picked.sort_unstable();
    let mut keep = vec![false; docs.len()];
    for i in picked {
        keep[i] = true;
    }
    docs.into_iter()
        .zip(keep)
        .filter_map(|(d, k)| k.then_some(d))
        .collect()
}

/// Writes documents in the record layout accepted by [`load_corpus`].
pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = File::create(path).map_err(io_err)?;
    for d in docs {
        let rec = OutRecord {
            id: &d.id,
            text: &d.text,
            date: d.meta.get("date").map(String::as_str),
            rating: d.meta.get("rating").map(String::as_str),
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(f, "{line}").map_err(io_err)?;
    }
    Ok(())
}

/// Beginning/middle/end of a document. The three parts are contiguous
/// slices of the source: whitespace between two parts stays with the
/// earlier one, so `beginning + middle + end` is the original text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentTriple {
    pub beginning: String,
    pub middle: String,
    pub end: String,
    /// Character offsets where the middle and the end start.
    pub boundaries: [usize; 2],
}

impl SegmentTriple {
    pub fn parts(&self) -> [&str; 3] {
        [&self.beginning, &self.middle, &self.end]
    }

    pub fn rejoin(&self) -> String {
        let mut s = String::with_capacity(self.beginning.len() + self.middle.len() + self.end.len());
        s.push_str(&self.beginning);
        s.push_str(&self.middle);
        s.push_str(&self.end);
        s
    }
}

/// Sizes of `n` units split into `parts` segments, earlier segments taking
/// the remainder one unit each (10 -> 4/3/3).
pub fn balanced_sizes(n: usize, parts: usize) -> Vec<usize> {
    let base = n / parts;
    let rem = n % parts;
    (0..parts).map(|i| base + usize::from(i < rem)).collect()
}

/// Splits `text` into consecutive slices holding `sizes[i]` whitespace
/// tokens each. Sizes must sum to the token count.
pub fn split_by_token_counts(text: &str, sizes: &[usize]) -> Vec<String> {
    let spans = text::whitespace_spans(text);
    debug_assert_eq!(sizes.iter().sum::<usize>(), spans.len());
    let mut out = Vec::with_capacity(sizes.len());
    let mut start_byte = 0;
    let mut consumed = 0;
    for (i, &size) in sizes.iter().enumerate() {
        consumed += size;
        let end_byte = if i + 1 == sizes.len() || consumed >= spans.len() {
            text.len()
        } else {
            spans[consumed].start
        };
        out.push(text[start_byte..end_byte].to_string());
        start_byte = end_byte;
    }
    out
}

pub fn split_thirds(doc: &Document) -> Result<SegmentTriple, CorpusError> {
    let n = text::whitespace_spans(&doc.text).len();
    if n < 3 {
        return Err(CorpusError::TooShort {
            id: doc.id.clone(),
            units: n,
            needed: 3,
        });
    }
    let parts = split_by_token_counts(&doc.text, &balanced_sizes(n, 3));
    let b1 = parts[0].chars().count();
    let b2 = b1 + parts[1].chars().count();
    let mut it = parts.into_iter();
    Ok(SegmentTriple {
        beginning: it.next().unwrap_or_default(),
        middle: it.next().unwrap_or_default(),
        end: it.next().unwrap_or_default(),
        boundaries: [b1, b2],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    PreCutoff,
    PostCutoff,
}

impl Horizon {
    /// Events dated on the cutoff day count as pre-cutoff.
    pub fn classify(event: NaiveDate, cutoff: NaiveDate) -> Self {
        if event <= cutoff {
            Horizon::PreCutoff
        } else {
            Horizon::PostCutoff
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Horizon::PreCutoff => "pre_cutoff",
            Horizon::PostCutoff => "post_cutoff",
        }
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A model's knowledge cutoff. `label` is the text bound into prompts
/// ("2023-03"); `date` is the last day it covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutoff {
    pub date: NaiveDate,
    pub label: String,
}

impl FromStr for Cutoff {
    type Err = String;

    /// Accepts `YYYY-MM-DD` or `YYYY-MM` (end of that month).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(date) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Ok(Cutoff {
                date,
                label: s.to_string(),
            });
        }
        let first = NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d")
            .map_err(|_| format!("expected YYYY-MM or YYYY-MM-DD, got {s:?}"))?;
        let (y, m) = if first.month() == 12 {
            (first.year() + 1, 1)
        } else {
            (first.year(), first.month() + 1)
        };
        let date = NaiveDate::from_ymd_opt(y, m, 1)
            .and_then(|d| d.pred_opt())
            .ok_or_else(|| format!("date out of range: {s:?}"))?;
        Ok(Cutoff {
            date,
            label: s.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsPair {
    pub pair_id: String,
    pub true_text: String,
    pub falsified_text: String,
    pub event_date: NaiveDate,
    pub horizon: Horizon,
}

/// Parses an event date (`YYYY-MM-DD`, optionally followed by a time).
pub fn parse_event_date(value: &str) -> Option<NaiveDate> {
    let v = value.trim();
    let head = v.get(..10).unwrap_or(v);
    NaiveDate::parse_from_str(head, "%Y-%m-%d").ok()
}

pub fn build_pairs(
    docs: &[Document],
    cutoff: NaiveDate,
    engine: &dyn Negator,
) -> Result<Vec<NewsPair>, CorpusError> {
    docs.iter()
        .map(|d| {
            let raw = d
                .meta
                .get("date")
                .ok_or_else(|| CorpusError::MissingDate { id: d.id.clone() })?;
            let event_date = parse_event_date(raw).ok_or_else(|| CorpusError::BadDate {
                id: d.id.clone(),
                value: raw.clone(),
            })?;
            let falsified = negate(&d.text, engine).map_err(|source| CorpusError::Negation {
                id: d.id.clone(),
                source,
            })?;
            Ok(NewsPair {
                pair_id: d.id.clone(),
                true_text: d.text.clone(),
                falsified_text: falsified,
                event_date,
                horizon: Horizon::classify(event_date, cutoff),
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    pair_id: String,
    true_text: String,
    falsified_text: String,
    event_date: String,
    #[serde(default, skip_serializing)]
    horizon: Option<Horizon>,
}

/// Writes pairs as `{pair_id, true_text, falsified_text, event_date}` lines.
pub fn write_pairs(path: &Path, pairs: &[NewsPair]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = File::create(path).map_err(io_err)?;
    for p in pairs {
        let rec = PairRecord {
            pair_id: p.pair_id.clone(),
            true_text: p.true_text.clone(),
            falsified_text: p.falsified_text.clone(),
            event_date: p.event_date.format("%Y-%m-%d").to_string(),
            horizon: None,
        };
        writeln!(f, "{}", serde_json::to_string(&rec).expect("pair serializes")).map_err(io_err)?;
    }
    Ok(())
}

/// Reads a pair file. Records may carry an explicit `horizon`; records
/// without one are classified against `cutoff`, which is then required.
pub fn load_pairs(path: &Path, cutoff: Option<NaiveDate>) -> Result<Vec<NewsPair>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let rec: PairRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let event_date = parse_event_date(&rec.event_date)
            .ok_or_else(|| malformed(format!("unparseable event_date {:?}", rec.event_date)))?;
        let horizon = match (rec.horizon, cutoff) {
            (Some(h), _) => h,
            (None, Some(c)) => Horizon::classify(event_date, c),
            (None, None) => return Err(malformed("no horizon and no cutoff date given".into())),
        };
        if rec.true_text == rec.falsified_text {
            return Err(malformed("true_text equals falsified_text".into()));
        }
        out.push(NewsPair {
            pair_id: rec.pair_id,
            true_text: rec.true_text,
            falsified_text: rec.falsified_text,
            event_date,
            horizon,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::WordPunctTokenizer;

    fn doc(text: &str) -> Document {
        Document::new("d", text, Source::Custom, &WordPunctTokenizer)
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn sample_is_deterministic() {
        let lines: Vec<String> = (0..5)
            .map(|i| format!(r#"{{"id":"r{i}","text":"review number {i} is fine"}}"#))
            .collect();
        let f = write_lines(&lines);
        let opts = LoadOptions {
            source: Source::AmazonReviews,
            max_tokens: 4000,
            sample_size: 3,
            seed: 7,
        };
        let a = load_corpus(f.path(), &opts, &WordPunctTokenizer).unwrap();
        let b = load_corpus(f.path(), &opts, &WordPunctTokenizer).unwrap();
        assert_eq!(a.len(), 3);
        let ids = |d: &[Document]| d.iter().map(|d| d.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn all_over_limit_is_an_error() {
        let f = write_lines(&[r#"{"id":1,"text":"one two three four"}"#.to_string()]);
        let opts = LoadOptions {
            source: Source::Custom,
            max_tokens: 3,
            sample_size: 10,
            seed: 1,
        };
        assert!(matches!(
            load_corpus(f.path(), &opts, &WordPunctTokenizer),
            Err(CorpusError::NoEligible { total: 1, max_tokens: 3 })
        ));
    }

    #[test]
    fn malformed_line_is_reported() {
        let f = write_lines(&[
            r#"{"id":"a","text":"fine"}"#.to_string(),
            "{not json".to_string(),
        ]);
        match load_corpus(f.path(), &LoadOptions::new(Source::Custom), &WordPunctTokenizer) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let f = write_lines(&[
            r#"{"id":"a","text":"x"}"#.to_string(),
            r#"{"id":"a","text":"y"}"#.to_string(),
        ]);
        assert!(matches!(
            load_corpus(f.path(), &LoadOptions::new(Source::Custom), &WordPunctTokenizer),
            Err(CorpusError::DuplicateId { .. })
        ));
    }

    #[test]
    fn dialogue_is_linearized() {
        let f = write_lines(&[
            r#"{"id":"m1","dialogue":[{"speaker":"HOST","utterance":"Welcome."},{"speaker":"GUEST","utterance":"Thanks."}]}"#
                .to_string(),
        ]);
        let docs = load_corpus(f.path(), &LoadOptions::new(Source::Mediasum), &WordPunctTokenizer).unwrap();
        assert_eq!(docs[0].text, "HOST: Welcome.\nGUEST: Thanks.");
    }

    #[test]
    fn thirds_exact_and_remainder() {
        let t = split_thirds(&doc("a b c d e f g h i")).unwrap();
        assert_eq!(t.parts(), ["a b c ", "d e f ", "g h i"]);
        let t = split_thirds(&doc("a b c d e f g h i j")).unwrap();
        assert_eq!(t.parts(), ["a b c d ", "e f g ", "h i j"]);
        assert_eq!(t.boundaries, [8, 14]);
        assert!(matches!(
            split_thirds(&doc("a b")),
            Err(CorpusError::TooShort { units: 2, .. })
        ));
    }

    #[test]
    fn thirds_rejoin_with_odd_whitespace() {
        let text = "  héllo\n\nwörld  x\ty z ";
        let t = split_thirds(&doc(text)).unwrap();
        assert_eq!(t.rejoin(), text);
    }

    #[test]
    fn horizon_boundary_inclusive() {
        let cutoff = NaiveDate::from_ymd_opt(2023, 3, 1).unwrap();
        assert_eq!(
            Horizon::classify(NaiveDate::from_ymd_opt(2019, 5, 1).unwrap(), cutoff),
            Horizon::PreCutoff
        );
        assert_eq!(Horizon::classify(cutoff, cutoff), Horizon::PreCutoff);
        assert_eq!(
            Horizon::classify(cutoff.succ_opt().unwrap(), cutoff),
            Horizon::PostCutoff
        );
    }

    #[test]
    fn cutoff_parsing() {
        let c: Cutoff = "2023-03".parse().unwrap();
        assert_eq!(c.date, NaiveDate::from_ymd_opt(2023, 3, 31).unwrap());
        assert_eq!(c.label, "2023-03");
        let c: Cutoff = "2023-12".parse().unwrap();
        assert_eq!(c.date, NaiveDate::from_ymd_opt(2023, 12, 31).unwrap());
        let c: Cutoff = "2024-02-29".parse().unwrap();
        assert_eq!(c.date, NaiveDate::from_ymd_opt(2024, 2, 29).unwrap());
        assert!("March 2023".parse::<Cutoff>().is_err());
    }

    #[test]
    fn build_pairs_assigns_horizons() {
        let docs = vec![
            doc("The senate passed the bill.").with_meta("date", "2019-05-01"),
            Document::new("e", "X won the election.", Source::NewsPost, &WordPunctTokenizer)
                .with_meta("date", "2024-01-10T08:00:00Z"),
        ];
        let cutoff = NaiveDate::from_ymd_opt(2023, 3, 1).unwrap();
        let pairs = build_pairs(&docs, cutoff, &RuleNegator).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].horizon, Horizon::PreCutoff);
        assert_eq!(pairs[0].falsified_text, "The senate did not pass the bill.");
        assert_eq!(pairs[1].horizon, Horizon::PostCutoff);
        assert_eq!(pairs[1].falsified_text, "X did not win the election.");
    }

    #[test]
    fn build_pairs_requires_dates() {
        let cutoff = NaiveDate::from_ymd_opt(2023, 3, 1).unwrap();
        assert!(matches!(
            build_pairs(&[doc("The senate passed the bill.")], cutoff, &RuleNegator),
            Err(CorpusError::MissingDate { .. })
        ));
        let bad = doc("The senate passed the bill.").with_meta("date", "yesterday");
        assert!(matches!(
            build_pairs(&[bad], cutoff, &RuleNegator),
            Err(CorpusError::BadDate { .. })
        ));
    }

    #[test]
    fn pair_file_roundtrip_needs_cutoff() {
        let cutoff = NaiveDate::from_ymd_opt(2023, 3, 1).unwrap();
        let docs = vec![doc("The senate passed the bill.").with_meta("date", "2023-03-02")];
        let pairs = build_pairs(&docs, cutoff, &RuleNegator).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_pairs(f.path(), &pairs).unwrap();
        let raw = std::fs::read_to_string(f.path()).unwrap();
        assert!(!raw.contains("horizon"));
        assert!(load_pairs(f.path(), None).is_err());
        assert_eq!(load_pairs(f.path(), Some(cutoff)).unwrap(), pairs);
    }
}
