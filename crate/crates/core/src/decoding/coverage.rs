use std::collections::HashSet;

use super::{Candidate, DecodeError, Processor, StepContext, TokenDistribution};
use crate::corpus::SegmentTriple;
use crate::embedding::{SparseVector, TfIdfModel};
use crate::text;

const BEGINNING: usize = 0;
const END: usize = 2;

/// TF-IDF coverage of the beginning and end thirds by the text generated so
/// far. Similarities of an empty (or all out-of-vocabulary) prefix are 0.
#[derive(Debug, Clone)]
pub struct CoverageState {
    model: TfIdfModel,
    sections: [SparseVector; 3],
    vocab: [HashSet<String>; 3],
    pub gamma: f64,
    pub threshold: f64,
    s_b: f64,
    s_e: f64,
}

impl CoverageState {
    pub fn fit(source: &SegmentTriple, gamma: f64, threshold: f64) -> Result<Self, DecodeError> {
        if !(gamma > 1.0) || !gamma.is_finite() || !(threshold >= 0.0) {
            return Err(DecodeError::BadParameter {
                processor: "coverage",
                reason: format!("need gamma > 1 and threshold >= 0 (gamma={gamma}, threshold={threshold})"),
            });
        }
        let parts = source.parts();
        let model = TfIdfModel::fit(&parts, "thirds").map_err(|e| DecodeError::Processor {
            processor: "coverage",
            reason: e.to_string(),
        })?;
        let sections = parts.map(|p| model.vector(p));
        let vocab = parts.map(|p| text::terms(p).into_iter().collect());
        Ok(Self {
            model,
            sections,
            vocab,
            gamma,
            threshold,
            s_b: 0.0,
            s_e: 0.0,
        })
    }

    pub fn scores_for(&self, prefix: &str) -> (f64, f64) {
        let v = self.model.vector(prefix);
        (
            v.cosine(&self.sections[BEGINNING]).unwrap_or(0.0),
            v.cosine(&self.sections[END]).unwrap_or(0.0),
        )
    }

    pub fn update(&mut self, prefix: &str) {
        (self.s_b, self.s_e) = self.scores_for(prefix);
    }

    pub fn set_scores(&mut self, s_b: f64, s_e: f64) {
        (self.s_b, self.s_e) = (s_b, s_e);
    }

    pub fn s_b(&self) -> f64 {
        self.s_b
    }

    pub fn s_e(&self) -> f64 {
        self.s_e
    }

    pub fn imbalance(&self) -> f64 {
        (self.s_b - self.s_e).abs()
    }

    /// Index of the lagging third (0 beginning, 2 end) when the gap exceeds
    /// the threshold.
    pub fn under_covered(&self) -> Option<usize> {
        if self.imbalance() <= self.threshold {
            None
        } else if self.s_b > self.s_e {
            Some(END)
        } else {
            Some(BEGINNING)
        }
    }

    /// A token belongs to every third whose vocabulary contains it.
    pub fn in_section(&self, token_text: &str, section: usize) -> bool {
        text::normalize_token(token_text).is_some_and(|t| self.vocab[section].contains(&t))
    }

    /// Adds `ln gamma` to the logits of tokens from the lagging third.
    pub fn boost(&self, dist: TokenDistribution) -> Result<TokenDistribution, DecodeError> {
        let Some(section) = self.under_covered() else {
            return Ok(dist);
        };
        let bonus = self.gamma.ln();
        Ok(dist.map_logits(|c| {
            if self.in_section(&c.text, section) {
                c.logit + bonus
            } else {
                c.logit
            }
        })?)
    }
}

pub struct ForcedCoverage {
    pub state: CoverageState,
}

impl ForcedCoverage {
    pub fn new(state: CoverageState) -> Self {
        Self { state }
    }
}

impl Processor for ForcedCoverage {
    fn name(&self) -> &'static str {
        "forced_coverage"
    }

    fn transform(&mut self, dist: TokenDistribution, _ctx: &StepContext<'_>) -> Result<TokenDistribution, DecodeError> {
        self.state.boost(dist)
    }

    fn observe(&mut self, chosen: &Candidate, _d: &TokenDistribution, ctx: &StepContext<'_>) -> Result<(), DecodeError> {
        self.state.update(&format!("{}{}", ctx.generated_text, chosen.text));
        Ok(())
    }
}

/// Walks the top-k in probability order and takes the first token that
/// does not widen `|s_b - s_e|`; if all do, the one widening it least.
pub struct RejectionSampler {
    pub state: CoverageState,
    pub k: usize,
    pub rejections: usize,
}

impl RejectionSampler {
    pub fn new(state: CoverageState, k: usize) -> Result<Self, DecodeError> {
        if k == 0 {
            return Err(DecodeError::BadParameter {
                processor: "rejection_sampling",
                reason: "k must be at least 1".into(),
            });
        }
        Ok(Self { state, k, rejections: 0 })
    }

    pub fn choose(&mut self, dist: &TokenDistribution, prefix: &str) -> usize {
        let now = self.state.imbalance();
        let mut best: Option<(f64, usize)> = None;
        for (i, c) in dist.candidates().iter().enumerate().take(self.k) {
            if c.prob <= 0.0 {
                continue;
            }
            let (b, e) = self.state.scores_for(&format!("{prefix}{}", c.text));
            let after = (b - e).abs();
            if after <= now {
                return i;
            }
            self.rejections += 1;
            if best.is_none_or(|(a, _)| after < a) {
                best = Some((after, i));
            }
        }
        best.map_or(0, |(_, i)| i)
    }
}

impl Processor for RejectionSampler {
    fn name(&self) -> &'static str {
        "rejection_sampling"
    }

    fn select(&mut self, dist: &TokenDistribution, _tentative: usize, ctx: &StepContext<'_>) -> Result<usize, DecodeError> {
        Ok(self.choose(dist, ctx.generated_text))
    }

    fn observe(&mut self, chosen: &Candidate, _d: &TokenDistribution, ctx: &StepContext<'_>) -> Result<(), DecodeError> {
        self.state.update(&format!("{}{}", ctx.generated_text, chosen.text));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::testutil::{frame, prob};
    use proptest::prelude::*;

    fn triple() -> SegmentTriple {
        SegmentTriple {
            beginning: "battery charger cable ".into(),
            middle: "screen display pixels ".into(),
            end: "shipping delivery refund".into(),
            boundaries: [22, 44],
        }
    }

    #[test]
    fn within_threshold_is_identity() {
        let mut st = CoverageState::fit(&triple(), 1.5, 0.05).unwrap();
        st.set_scores(0.30, 0.27);
        let f = frame(&[(" refund", 0.5), (" battery", 0.5)]);
        assert_eq!(st.boost(f.clone()).unwrap(), f);
    }

    #[test]
    fn end_tokens_gain_log_gamma() {
        let mut st = CoverageState::fit(&triple(), 1.5, 0.05).unwrap();
        st.set_scores(0.30, 0.10);
        let p = 0.3;
        let f = frame(&[(" refund", p), (" battery", 1.0 - p)]);
        let d = st.boost(f.clone()).unwrap();
        let boosted = d.candidates().iter().find(|c| c.text == " refund").unwrap();
        let orig = f.candidates().iter().find(|c| c.text == " refund").unwrap();
        assert!((boosted.logit - orig.logit - 0.4055).abs() < 1e-4);
        let odds = |q: f64| q / (1.0 - q);
        assert!((odds(prob(&d, " refund")) - 1.5 * odds(p)).abs() < 1e-9);
    }

    #[test]
    fn scores_track_prefix() {
        let mut st = CoverageState::fit(&triple(), 1.5, 0.05).unwrap();
        st.update("");
        assert_eq!((st.s_b(), st.s_e()), (0.0, 0.0));
        st.update("battery charger");
        assert!(st.s_b() > 0.5 && st.s_e() == 0.0);
        assert_eq!(st.under_covered(), Some(END));
        assert!(CoverageState::fit(&triple(), 1.0, 0.05).is_err());
    }

    #[test]
    fn rejection_rules() {
        let mut st = CoverageState::fit(&triple(), 1.5, 0.05).unwrap();
        st.update("battery");
        let mut r = RejectionSampler::new(st, 5).unwrap();
        // Top-1 narrows the gap.
        let f = frame(&[(" refund", 0.6), (" cable", 0.4)]);
        assert_eq!(f.candidates()[r.choose(&f, "battery")].text, " refund");
        // Top-1 widens it, top-2 narrows it.
        let f = frame(&[(" cable", 0.6), (" refund", 0.4)]);
        assert_eq!(f.candidates()[r.choose(&f, "battery")].text, " refund");
        // All widen: least widening wins.
        let f = frame(&[
            (" cable", 0.3),
            (" charger", 0.25),
            (" charger battery", 0.2),
            (" cable battery", 0.15),
            (" charger cable", 0.1),
        ]);
        let chosen = r.choose(&f, "battery");
        let after = |i: usize| {
            let (b, e) = r.state.scores_for(&format!("battery{}", f.candidates()[i].text));
            (b - e).abs()
        };
        for i in 0..5 {
            assert!(after(chosen) <= after(i));
        }
    }

    proptest! {
        #[test]
        fn chosen_within_top_k(ps in prop::collection::vec(0.01f64..1.0, 1..20), k in 1usize..6, prefix in "(battery |refund |screen ){0,4}") {
            let words = ["battery", "refund", "screen", "cable", "delivery", "pixels", "zzz"];
            let names: Vec<String> = (0..ps.len()).map(|i| format!(" {}", words[i % words.len()])).collect();
            let toks: Vec<(&str, f64)> = names.iter().map(String::as_str).zip(ps.iter().copied()).collect();
            let f = frame(&toks);
            let mut st = CoverageState::fit(&triple(), 1.5, 0.05).unwrap();
            st.update(&prefix);
            let boosted = st.boost(f.clone()).unwrap();
            prop_assert!(boosted.validate().is_ok());
            let mut r = RejectionSampler::new(st, k).unwrap();
            prop_assert!(r.choose(&f, &prefix) < k.min(f.len()));
        }
    }
}
