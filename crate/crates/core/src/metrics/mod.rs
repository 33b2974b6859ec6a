//! Bias and hallucination measures.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Horizon, SegmentTriple};
use crate::embedding::{cosine, Embedder, EmbeddingError};
use crate::judge::FramingLabel;

pub use report::{AuditReport, CoverageSummary, FramingSummary, HallucinationSummary, ReportRow};

/// Margin by which the beginning must beat the middle to count as primacy.
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("no records for horizon {0}")]
    EmptyHorizon(&'static str),
    #[error("record {0} has no confidence tag")]
    MissingConfidence(String),
    #[error("alpha must be a nonnegative number, got {0}")]
    BadAlpha(f64),
    #[error("{0} must lie in [0, 1], got {1}")]
    OutOfRange(&'static str, f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramingPair {
    pub doc_id: String,
    pub context: FramingLabel,
    pub summary: FramingLabel,
}

impl FramingPair {
    pub fn new(doc_id: impl Into<String>, context: FramingLabel, summary: FramingLabel) -> Self {
        Self {
            doc_id: doc_id.into(),
            context,
            summary,
        }
    }

    pub fn changed(&self) -> bool {
        self.context != self.summary
    }
}

pub fn framing_change_fraction(pairs: &[FramingPair]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty("framing_change_fraction"));
    }
    Ok(pairs.iter().filter(|p| p.changed()).count() as f64 / pairs.len() as f64)
}

/// Counts of (context label, summary label); rows are context labels in
/// [`FramingLabel::ALL`] order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub counts: [[usize; 3]; 3],
}

impl TransitionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn count(&self, from: FramingLabel, to: FramingLabel) -> usize {
        self.counts[from.index()][to.index()]
    }

    pub fn fraction(&self, from: FramingLabel, to: FramingLabel) -> f64 {
        self.count(from, to) as f64 / self.total() as f64
    }

    pub fn off_diagonal(&self) -> f64 {
        let off: usize = (0..3)
            .flat_map(|i| (0..3).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.counts[i][j])
            .sum();
        off as f64 / self.total() as f64
    }
}

pub fn transition_matrix(pairs: &[FramingPair]) -> Result<TransitionMatrix, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty("transition_matrix"));
    }
    let mut m = TransitionMatrix::default();
    for p in pairs {
        m.counts[p.context.index()][p.summary.index()] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTriple {
    pub doc_id: String,
    pub s_b: f64,
    pub s_m: f64,
    pub s_e: f64,
}

impl CoverageTriple {
    pub fn new(doc_id: impl Into<String>, s_b: f64, s_m: f64, s_e: f64) -> Self {
        Self {
            doc_id: doc_id.into(),
            s_b,
            s_m,
            s_e,
        }
    }
}

/// Cosine of the summary embedding against each third.
pub fn coverage(
    doc_id: &str,
    summary: &str,
    triple: &SegmentTriple,
    embedder: &Embedder,
) -> Result<CoverageTriple, EmbeddingError> {
    let s = embedder.embed(summary)?;
    let [b, m, e] = triple.parts().map(|p| embedder.embed(p).and_then(|v| cosine(&s, &v)));
    Ok(CoverageTriple::new(doc_id, b?, m?, e?))
}

/// Fraction of items with `s_b > s_m + alpha` (strict).
pub fn primacy_score(triples: &[CoverageTriple], alpha: f64) -> Result<f64, MetricsError> {
    if triples.is_empty() {
        return Err(MetricsError::Empty("primacy_score"));
    }
    if !(alpha >= 0.0) {
        return Err(MetricsError::BadAlpha(alpha));
    }
    Ok(triples.iter().filter(|t| t.s_b > t.s_m + alpha).count() as f64 / triples.len() as f64)
}

/// Toolkit extension, not part of the published measures: fraction of
/// items whose beginning similarity beats both other thirds.
pub fn beginning_dominance(triples: &[CoverageTriple]) -> Result<f64, MetricsError> {
    if triples.is_empty() {
        return Err(MetricsError::Empty("beginning_dominance"));
    }
    Ok(triples.iter().filter(|t| t.s_b > t.s_m.max(t.s_e)).count() as f64 / triples.len() as f64)
}

pub fn coverage_means(triples: &[CoverageTriple]) -> Result<[f64; 3], MetricsError> {
    if triples.is_empty() {
        return Err(MetricsError::Empty("coverage_means"));
    }
    let n = triples.len() as f64;
    let sum = triples
        .iter()
        .fold([0.0; 3], |a, t| [a[0] + t.s_b, a[1] + t.s_m, a[2] + t.s_e]);
    Ok(sum.map(|s| s / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub pair_id: String,
    pub horizon: Horizon,
    /// Verdict "true" on the true text.
    pub verdict_true: bool,
    /// Verdict "true" on the falsified text.
    pub verdict_false: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_true: Option<Confidence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_false: Option<Confidence>,
}

impl PredictionRecord {
    pub fn new(pair_id: impl Into<String>, horizon: Horizon, verdict_true: bool, verdict_false: bool) -> Self {
        Self {
            pair_id: pair_id.into(),
            horizon,
            verdict_true,
            verdict_false,
            confidence_true: None,
            confidence_false: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonScores {
    pub n: usize,
    pub actual: f64,
    pub falsified: f64,
    pub strict: f64,
}

/// Per-horizon accuracy on true texts, on falsified texts, and on both at once.
pub fn hallucination_scores(records: &[PredictionRecord]) -> Result<BTreeMap<Horizon, HorizonScores>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty("hallucination_scores"));
    }
    let mut counts: BTreeMap<Horizon, [usize; 4]> = BTreeMap::new();
    for r in records {
        let c = counts.entry(r.horizon).or_default();
        c[0] += 1;
        c[1] += r.verdict_true as usize;
        c[2] += !r.verdict_false as usize;
        c[3] += (r.verdict_true && !r.verdict_false) as usize;
    }
    Ok(counts
        .into_iter()
        .map(|(h, [n, a, f, s])| {
            let d = n as f64;
            (
                h,
                HorizonScores {
                    n,
                    actual: a as f64 / d,
                    falsified: f as f64 / d,
                    strict: s as f64 / d,
                },
            )
        })
        .collect())
}

pub fn cutoff_gap(pre_strict: f64, post_strict: f64) -> Result<f64, MetricsError> {
    for (name, v) in [("pre-cutoff strict accuracy", pre_strict), ("post-cutoff strict accuracy", post_strict)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(MetricsError::OutOfRange(name, v));
        }
    }
    Ok((pre_strict - post_strict).abs())
}

/// Gap between the two horizons' strict accuracies; `None` unless both are present.
pub fn cutoff_gap_of(scores: &BTreeMap<Horizon, HorizonScores>) -> Option<f64> {
    let pre = scores.get(&Horizon::PreCutoff)?;
    let post = scores.get(&Horizon::PostCutoff)?;
    cutoff_gap(pre.strict, post.strict).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    True,
    Falsified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceCell {
    pub horizon: Horizon,
    pub side: Side,
    pub high: usize,
    pub low: usize,
}

impl ConfidenceCell {
    pub fn high_fraction(&self) -> f64 {
        self.high as f64 / (self.high + self.low) as f64
    }

    pub fn low_fraction(&self) -> f64 {
        self.low as f64 / (self.high + self.low) as f64
    }
}

pub fn confidence_tally(records: &[PredictionRecord]) -> Result<Vec<ConfidenceCell>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty("confidence_tally"));
    }
    let mut cells: BTreeMap<(Horizon, Side), (usize, usize)> = BTreeMap::new();
    for r in records {
        for (side, c) in [(Side::True, r.confidence_true), (Side::Falsified, r.confidence_false)] {
            let c = c.ok_or_else(|| MetricsError::MissingConfidence(r.pair_id.clone()))?;
            let cell = cells.entry((r.horizon, side)).or_default();
            match c {
                Confidence::High => cell.0 += 1,
                Confidence::Low => cell.1 += 1,
            }
        }
    }
    Ok(cells
        .into_iter()
        .map(|((horizon, side), (high, low))| ConfidenceCell { horizon, side, high, low })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingProvider;
    use crate::judge::FramingLabel::{Negative as Neg, Neutral as Neu, Positive as Pos};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn pairs(v: &[(FramingLabel, FramingLabel)]) -> Vec<FramingPair> {
        v.iter().enumerate().map(|(i, (c, s))| FramingPair::new(i.to_string(), *c, *s)).collect()
    }

    #[test]
    fn framing_examples() {
        let p = pairs(&[(Neu, Neu), (Pos, Neg), (Neg, Neg), (Neu, Pos)]);
        assert_eq!(framing_change_fraction(&p).unwrap(), 0.5);
        assert_eq!(framing_change_fraction(&pairs(&[(Pos, Pos), (Neg, Neg)])).unwrap(), 0.0);
        assert_eq!(framing_change_fraction(&[]), Err(MetricsError::Empty("framing_change_fraction")));

        let mut v = vec![(Pos, Pos); 9];
        v.push((Neu, Pos));
        let m = transition_matrix(&pairs(&v)).unwrap();
        assert!((m.fraction(Neu, Pos) - 0.10).abs() < 1e-12);
        assert!((m.off_diagonal() - framing_change_fraction(&pairs(&v)).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn primacy_examples() {
        let t = |b, m, e| vec![CoverageTriple::new("d", b, m, e)];
        assert_eq!(primacy_score(&t(0.90, 0.80, 0.70), 0.05).unwrap(), 1.0);
        assert_eq!(primacy_score(&t(0.85, 0.80, 0.70), 0.05).unwrap(), 0.0);
        assert!(primacy_score(&t(0.9, 0.8, 0.7), -0.1).is_err());
        assert_eq!(beginning_dominance(&t(0.85, 0.80, 0.70)).unwrap(), 1.0);
        assert_eq!(beginning_dominance(&t(0.85, 0.80, 0.90)).unwrap(), 0.0);
    }

    #[test]
    fn coverage_examples() {
        let e = Embedder::new(Arc::new(HashingProvider::default()));
        let triple = SegmentTriple {
            beginning: "battery drains quickly ".into(),
            middle: "screen looks sharp ".into(),
            end: "shipping was late".into(),
            boundaries: [23, 42],
        };
        let c = coverage("d", "battery drains quickly", &triple, &e).unwrap();
        assert!((c.s_b - 1.0).abs() < 1e-12);
        let c = coverage("d", "zebra violin marmalade", &triple, &e).unwrap();
        for s in [c.s_b, c.s_m, c.s_e] {
            assert!(s.abs() < 1e-6);
        }
    }

    #[test]
    fn hallucination_examples() {
        let recs: Vec<_> = [(true, false), (true, true), (false, false)]
            .iter()
            .enumerate()
            .map(|(i, (t, f))| PredictionRecord::new(i.to_string(), Horizon::PreCutoff, *t, *f))
            .collect();
        let s = &hallucination_scores(&recs).unwrap()[&Horizon::PreCutoff];
        assert!((s.actual - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.falsified - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.strict - 1.0 / 3.0).abs() < 1e-12);

        assert!((cutoff_gap(0.26, 0.21).unwrap() - 0.05).abs() < 1e-12);
        assert!((cutoff_gap(0.19, 0.13).unwrap() - 0.06).abs() < 1e-12);
        assert_eq!(cutoff_gap(0.4, 0.4).unwrap(), 0.0);
        assert!(cutoff_gap(1.2, 0.1).is_err());
    }

    #[test]
    fn confidence_examples() {
        let mut recs = Vec::new();
        for (i, c) in [Confidence::High, Confidence::High, Confidence::High, Confidence::Low]
            .into_iter()
            .enumerate()
        {
            let mut r = PredictionRecord::new(i.to_string(), Horizon::PreCutoff, true, false);
            r.confidence_true = Some(c);
            r.confidence_false = Some(Confidence::High);
            recs.push(r);
        }
        let cells = confidence_tally(&recs).unwrap();
        let t = cells.iter().find(|c| c.side == Side::True).unwrap();
        assert_eq!((t.high_fraction(), t.low_fraction()), (0.75, 0.25));
        let f = cells.iter().find(|c| c.side == Side::Falsified).unwrap();
        assert_eq!((f.high_fraction(), f.low_fraction()), (1.0, 0.0));

        recs[2].confidence_false = None;
        assert_eq!(confidence_tally(&recs), Err(MetricsError::MissingConfidence("2".into())));
    }

    fn label() -> impl Strategy<Value = FramingLabel> {
        prop::sample::select(FramingLabel::ALL.to_vec())
    }

    fn records() -> impl Strategy<Value = Vec<PredictionRecord>> {
        prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 1..50).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (pre, t, f))| {
                    let h = if pre { Horizon::PreCutoff } else { Horizon::PostCutoff };
                    PredictionRecord::new(i.to_string(), h, t, f)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn framing_matches_brute_force(v in prop::collection::vec((label(), label()), 1..50), seed in any::<u64>()) {
            let p = pairs(&v);
            let mut brute = 0.0;
            for (c, s) in &v {
                if c != s { brute += 1.0; }
            }
            brute /= v.len() as f64;
            let phi = framing_change_fraction(&p).unwrap();
            prop_assert!((phi - brute).abs() < 1e-12);
            let m = transition_matrix(&p).unwrap();
            prop_assert_eq!(m.total(), v.len());
            prop_assert!((m.off_diagonal() - phi).abs() < 1e-12);

            let mut shuffled = p.clone();
            crate::rng::shuffle(&mut shuffled, seed);
            prop_assert_eq!(framing_change_fraction(&shuffled).unwrap(), phi);
            prop_assert_eq!(transition_matrix(&shuffled).unwrap(), m);
        }

        #[test]
        fn primacy_monotone_in_alpha(
            v in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..50),
            a1 in 0.0f64..0.5, a2 in 0.0f64..0.5,
        ) {
            let t: Vec<_> = v.iter().map(|(b, m, e)| CoverageTriple::new("d", *b, *m, *e)).collect();
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            prop_assert!(primacy_score(&t, hi).unwrap() <= primacy_score(&t, lo).unwrap());
            let brute = v.iter().filter(|(b, m, _)| *b > *m + lo).count() as f64 / v.len() as f64;
            prop_assert!((primacy_score(&t, lo).unwrap() - brute).abs() < 1e-12);
        }

        #[test]
        fn strict_within_frechet_bounds(recs in records(), seed in any::<u64>()) {
            let scores = hallucination_scores(&recs).unwrap();
            for (h, s) in &scores {
                prop_assert!(s.strict <= s.actual.min(s.falsified) + 1e-12);
                prop_assert!(s.strict >= (s.actual + s.falsified - 1.0).max(0.0) - 1e-12);
                let mine: Vec<_> = recs.iter().filter(|r| r.horizon == *h).collect();
                let brute = mine.iter().filter(|r| r.verdict_true && !r.verdict_false).count() as f64 / mine.len() as f64;
                prop_assert!((s.strict - brute).abs() < 1e-12);
            }
            let mut shuffled = recs.clone();
            crate::rng::shuffle(&mut shuffled, seed);
            prop_assert_eq!(hallucination_scores(&shuffled).unwrap(), scores);
        }
    }
}
