//! Framing judge and its star-rating calibration.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, GenerationConfig};

pub const FRAMING_PROMPT: &str = include_str!("../assets/prompts/judge_framing.txt");
pub const FRAMING_PROMPT_STRICT: &str = include_str!("../assets/prompts/judge_framing_strict.txt");
pub const RATING_PROMPT: &str = include_str!("../assets/prompts/judge_rating.txt");
pub const RATING_PROMPT_STRICT: &str = include_str!("../assets/prompts/judge_rating_strict.txt");

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("cannot judge empty text")]
    EmptyText,
    #[error("judge output unparseable after reprompt: {response:?}")]
    Unclassifiable { response: String },
    #[error("calibration needs at least one record")]
    EmptyInput,
    #[error("rating {0} outside 1..=5")]
    BadRating(i64),
    #[error("{path}:{line}: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FramingLabel {
    Negative,
    Neutral,
    Positive,
}

impl FramingLabel {
    pub const ALL: [FramingLabel; 3] = [FramingLabel::Negative, FramingLabel::Neutral, FramingLabel::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FramingLabel::Negative => "negative",
            FramingLabel::Neutral => "neutral",
            FramingLabel::Positive => "positive",
        }
    }

    /// 1-2 stars negative, 3 neutral, 4-5 positive.
    pub fn from_rating(rating: u8) -> Result<Self, JudgeError> {
        match rating {
            1 | 2 => Ok(FramingLabel::Negative),
            3 => Ok(FramingLabel::Neutral),
            4 | 5 => Ok(FramingLabel::Positive),
            r => Err(JudgeError::BadRating(r as i64)),
        }
    }
}

impl fmt::Display for FramingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FramingLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_label(s)
            .filter(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown framing label {s:?}"))
    }
}

static LABEL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(positive|neutral|negative)\b").unwrap());
static RATING_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([1-5])\b").unwrap());

/// First label word in the response, case-insensitive.
pub fn parse_label(response: &str) -> Option<FramingLabel> {
    let m = LABEL_RE.find(response)?;
    Some(match m.as_str().to_ascii_lowercase().as_str() {
        "positive" => FramingLabel::Positive,
        "neutral" => FramingLabel::Neutral,
        _ => FramingLabel::Negative,
    })
}

/// First standalone digit 1-5 in the response.
pub fn parse_rating(response: &str) -> Option<u8> {
    RATING_RE.find(response).map(|m| m.as_str().parse().unwrap())
}

pub fn fill(template: &str, text: &str) -> String {
    template.replace("[TEXT]", text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub id: String,
    pub text: String,
    pub rating: u8,
    pub gold: FramingLabel,
}

impl CalibrationRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, rating: u8) -> Result<Self, JudgeError> {
        Ok(Self {
            id: id.into(),
            text: text.into(),
            rating,
            gold: FramingLabel::from_rating(rating)?,
        })
    }
}

#[derive(Deserialize)]
struct RawCalibration {
    id: serde_json::Value,
    text: String,
    rating: i64,
}

/// JSONL lines `{"id", "text", "rating"}`; the gold label is derived.
pub fn load_calibration(path: &Path) -> Result<Vec<CalibrationRecord>, JudgeError> {
    let malformed = |line: usize, reason: String| JudgeError::Malformed {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCalibration = serde_json::from_str(&line).map_err(|e| malformed(i + 1, e.to_string()))?;
        let id = match raw.id {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        if !(1..=5).contains(&raw.rating) {
            return Err(malformed(i + 1, JudgeError::BadRating(raw.rating).to_string()));
        }
        out.push(CalibrationRecord::new(id, raw.text, raw.rating as u8)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    /// Ask for a 1-5 product rating and map it to a label.
    #[default]
    Rating,
    /// Ask for the framing label directly.
    Framing,
}

impl FromStr for CalibrationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rating" => Ok(Self::Rating),
            "framing" => Ok(Self::Framing),
            _ => Err(format!("unknown calibration mode {s:?} (rating|framing)")),
        }
    }
}

pub struct Judge<'a> {
    gateway: &'a Gateway,
    model: String,
    config: GenerationConfig,
}

impl<'a> Judge<'a> {
    pub fn new(gateway: &'a Gateway, model: &str) -> Self {
        Self {
            gateway,
            model: model.to_string(),
            config: GenerationConfig::default().with_max_new_tokens(16),
        }
    }

    pub fn with_config(mut self, config: GenerationConfig) -> Self {
        self.config = config;
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn classify(&self, text: &str) -> Result<FramingLabel, JudgeError> {
        self.ask(text, FRAMING_PROMPT, FRAMING_PROMPT_STRICT, parse_label)
    }

    pub fn rate(&self, text: &str) -> Result<u8, JudgeError> {
        self.ask(text, RATING_PROMPT, RATING_PROMPT_STRICT, parse_rating)
    }

    /// Framing label under `mode`: asked directly, or via a 1-5 rating.
    pub fn label(&self, text: &str, mode: CalibrationMode) -> Result<FramingLabel, JudgeError> {
        match mode {
            CalibrationMode::Framing => self.classify(text),
            CalibrationMode::Rating => FramingLabel::from_rating(self.rate(text)?),
        }
    }

    fn ask<T>(&self, text: &str, prompt: &str, strict: &str, parse: fn(&str) -> Option<T>) -> Result<T, JudgeError> {
        if text.trim().is_empty() {
            return Err(JudgeError::EmptyText);
        }
        let first = self.gateway.complete(&self.model, &fill(prompt, text), &self.config)?;
        if let Some(v) = parse(&first) {
            return Ok(v);
        }
        log::debug!("judge reprompt after {first:?}");
        let second = self.gateway.complete(&self.model, &fill(strict, text), &self.config)?;
        parse(&second).ok_or(JudgeError::Unclassifiable { response: second })
    }
}

/// Rows are gold labels; columns are judge labels plus a trailing
/// column for records the judge failed to label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 4]; 3],
}

impl ConfusionMatrix {
    pub const FAILED: usize = 3;

    pub fn add(&mut self, gold: FramingLabel, predicted: Option<FramingLabel>) {
        let col = predicted.map_or(Self::FAILED, FramingLabel::index);
        self.counts[gold.index()][col] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_total(&self, gold: FramingLabel) -> usize {
        self.counts[gold.index()].iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationItem {
    pub id: String,
    pub gold: FramingLabel,
    pub predicted: Option<FramingLabel>,
    pub raw_rating: Option<u8>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub judge_model: String,
    pub mode: CalibrationMode,
    pub n: usize,
    pub correct: usize,
    pub failed: usize,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub items: Vec<CalibrationItem>,
}

/// Failed items count against accuracy and land in the failed column.
/// Gateway errors other than unparseable output abort the run.
pub fn calibrate(
    records: &[CalibrationRecord],
    judge: &Judge<'_>,
    mode: CalibrationMode,
) -> Result<CalibrationReport, JudgeError> {
    if records.is_empty() {
        return Err(JudgeError::EmptyInput);
    }
    let items: Vec<CalibrationItem> = records
        .par_iter()
        .map(|r| {
            let outcome = match mode {
                CalibrationMode::Rating => judge
                    .rate(&r.text)
                    .map(|x| (FramingLabel::from_rating(x).ok(), Some(x))),
                CalibrationMode::Framing => judge.classify(&r.text).map(|l| (Some(l), None)),
            };
            match outcome {
                Ok((predicted, raw_rating)) => Ok(CalibrationItem {
                    id: r.id.clone(),
                    gold: r.gold,
                    predicted,
                    raw_rating,
                    error: None,
                }),
                Err(e @ (JudgeError::Unclassifiable { .. } | JudgeError::EmptyText)) => Ok(CalibrationItem {
                    id: r.id.clone(),
                    gold: r.gold,
                    predicted: None,
                    raw_rating: None,
                    error: Some(e.to_string()),
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, _>>()?;
    let mut confusion = ConfusionMatrix::default();
    for it in &items {
        confusion.add(it.gold, it.predicted);
    }
    let n = items.len();
    let correct = confusion.trace();
    Ok(CalibrationReport {
        judge_model: judge.model().to_string(),
        mode,
        n,
        correct,
        failed: items.iter().filter(|i| i.predicted.is_none()).count(),
        accuracy: correct as f64 / n as f64,
        confusion,
        items,
    })
}

impl CalibrationReport {
    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "Judge `{}` ({} mode): accuracy {:.4} ({}/{}), {} unparseable\n\n",
            self.judge_model,
            match self.mode {
                CalibrationMode::Rating => "rating",
                CalibrationMode::Framing => "framing",
            },
            self.accuracy,
            self.correct,
            self.n,
            self.failed
        );
        s.push_str("| gold \\ judge | negative | neutral | positive | failed | total |\n");
        s.push_str("|---|---:|---:|---:|---:|---:|\n");
        for g in FramingLabel::ALL {
            let row = &self.confusion.counts[g.index()];
            s.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                g,
                row[0],
                row[1],
                row[2],
                row[3],
                self.confusion.row_total(g)
            ));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["gold", "negative", "neutral", "positive", "failed", "accuracy", "n"])
            .unwrap();
        for g in FramingLabel::ALL {
            let row = &self.confusion.counts[g.index()];
            let mut rec: Vec<String> = vec![g.to_string()];
            rec.extend(row.iter().map(usize::to_string));
            rec.push(self.accuracy.to_string());
            rec.push(self.n.to_string());
            w.write_record(&rec).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Backend;
    use proptest::prelude::*;
    use std::collections::HashMap;
    use std::sync::Arc;

    struct Canned(HashMap<String, String>, String);

    impl Backend for Canned {
        fn describe(&self) -> String {
            "canned".into()
        }
        fn complete(&self, _m: &str, prompt: &str, _c: &GenerationConfig) -> Result<String, GatewayError> {
            Ok(self.0.get(prompt).cloned().unwrap_or_else(|| self.1.clone()))
        }
    }

    fn gateway(map: &[(&str, &str)], fallback: &str) -> Gateway {
        let m = map.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Gateway::live(Arc::new(Canned(m, fallback.to_string())))
    }

    #[test]
    fn rating_mapping_is_total() {
        let want = [
            (1, FramingLabel::Negative),
            (2, FramingLabel::Negative),
            (3, FramingLabel::Neutral),
            (4, FramingLabel::Positive),
            (5, FramingLabel::Positive),
        ];
        for (r, l) in want {
            assert_eq!(FramingLabel::from_rating(r).unwrap(), l);
        }
        assert!(FramingLabel::from_rating(0).is_err());
        assert!(FramingLabel::from_rating(6).is_err());
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_label("Negative"), Some(FramingLabel::Negative));
        assert_eq!(parse_label("the sentiment is Neutral."), Some(FramingLabel::Neutral));
        assert_eq!(parse_label("POSITIVE, not negative"), Some(FramingLabel::Positive));
        assert_eq!(parse_label("nonnegative"), None);
        assert_eq!(parse_rating("Rating: 4/5"), Some(4));
        assert_eq!(parse_rating("I'd say 10"), None);
    }

    #[test]
    fn classify_reprompts_once() {
        let text = "fine product";
        let g = gateway(&[(&fill(FRAMING_PROMPT, text), "hmm")], "Positive!");
        assert_eq!(Judge::new(&g, "j").classify(text).unwrap(), FramingLabel::Positive);
        assert_eq!(g.backend_calls(), 2);

        let g = gateway(&[], "no idea");
        assert!(matches!(
            Judge::new(&g, "j").classify(text),
            Err(JudgeError::Unclassifiable { .. })
        ));
        assert_eq!(g.backend_calls(), 2);
        assert!(matches!(Judge::new(&g, "j").classify(" "), Err(JudgeError::EmptyText)));
    }

    #[test]
    fn calibrate_identity_and_degenerate() {
        let recs: Vec<_> = (0..10)
            .map(|i| CalibrationRecord::new(i.to_string(), format!("review {i}"), (i % 5 + 1) as u8).unwrap())
            .collect();
        let map: Vec<(String, String)> = recs
            .iter()
            .map(|r| (fill(RATING_PROMPT, &r.text), r.rating.to_string()))
            .collect();
        let refs: Vec<(&str, &str)> = map.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let g = gateway(&refs, "");
        let rep = calibrate(&recs, &Judge::new(&g, "j"), CalibrationMode::Rating).unwrap();
        assert_eq!(rep.accuracy, 1.0);
        assert_eq!(rep.confusion.trace(), rep.n);

        let pos: Vec<_> = (0..4)
            .map(|i| CalibrationRecord::new(i.to_string(), format!("r{i}"), 5).unwrap())
            .collect();
        let g = gateway(&[], "Neutral");
        let rep = calibrate(&pos, &Judge::new(&g, "j"), CalibrationMode::Framing).unwrap();
        assert_eq!(rep.accuracy, 0.0);
        assert_eq!(rep.confusion.counts[FramingLabel::Positive.index()][FramingLabel::Neutral.index()], 4);
        assert!(matches!(
            calibrate(&[], &Judge::new(&g, "j"), CalibrationMode::Framing),
            Err(JudgeError::EmptyInput)
        ));
    }

    proptest! {
        #[test]
        fn noisy_responses_never_escape_the_label_set(noise in ".{0,80}") {
            if let Some(l) = parse_label(&noise) {
                prop_assert!(FramingLabel::ALL.contains(&l));
            }
            let g = gateway(&[], &noise);
            match Judge::new(&g, "j").classify("text") {
                Ok(l) => prop_assert!(FramingLabel::ALL.contains(&l)),
                Err(e) => prop_assert!(
                    matches!(e, JudgeError::Unclassifiable { .. }),
                    "unexpected error {e}"
                ),
            }
        }

        #[test]
        fn rows_sum_to_gold_counts(ratings in prop::collection::vec(1u8..=5, 1..30), answer in 1u8..=5) {
            let recs: Vec<_> = ratings.iter().enumerate()
                .map(|(i, r)| CalibrationRecord::new(i.to_string(), format!("t{i}"), *r).unwrap())
                .collect();
            let g = gateway(&[], &answer.to_string());
            let rep = calibrate(&recs, &Judge::new(&g, "j"), CalibrationMode::Rating).unwrap();
            for l in FramingLabel::ALL {
                prop_assert_eq!(rep.confusion.row_total(l), recs.iter().filter(|r| r.gold == l).count());
            }
            prop_assert!((rep.accuracy - rep.confusion.trace() as f64 / rep.n as f64).abs() < 1e-15);
        }
    }
}
