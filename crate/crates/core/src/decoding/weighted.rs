use std::collections::HashSet;

use super::{DecodeError, Processor, StepContext, TokenDistribution};
use crate::corpus::SegmentTriple;
use crate::embedding::TfIdfModel;

const NEGATIVE_LEXICON: &str = include_str!("../../assets/lexicon/negative.txt");

pub fn default_negative_lexicon() -> Vec<String> {
    NEGATIVE_LEXICON
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Token texts are matched whole, after trimming whitespace and lowercasing.
fn key(token_text: &str) -> String {
    token_text.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenWeightTable {
    negative: HashSet<String>,
    w_neg: f64,
    middle: HashSet<String>,
    w_mid: f64,
}

impl TokenWeightTable {
    pub fn new(negative: Vec<String>, w_neg: f64, middle: Vec<String>, w_mid: f64) -> Result<Self, DecodeError> {
        for (name, w) in [("w_neg", w_neg), ("w_mid", w_mid)] {
            if !(w > 0.0) || !w.is_finite() {
                return Err(DecodeError::BadParameter {
                    processor: "weighted_token",
                    reason: format!("{name} must be a positive finite weight, got {w}"),
                });
            }
        }
        Ok(Self {
            negative: negative.iter().map(|t| key(t)).collect(),
            w_neg,
            middle: middle.iter().map(|t| key(t)).collect(),
            w_mid,
        })
    }

    /// Top TF-IDF terms of the middle third, with the model fitted on the
    /// three thirds.
    pub fn middle_keywords(source: &SegmentTriple, k: usize) -> Result<Vec<String>, DecodeError> {
        let model = TfIdfModel::fit(&source.parts(), "thirds").map_err(|e| DecodeError::Processor {
            processor: "weighted_token",
            reason: e.to_string(),
        })?;
        Ok(model.top_terms(&source.middle, k))
    }

    /// Weights multiply when a token is in both sets.
    pub fn weight(&self, token_text: &str) -> f64 {
        let k = key(token_text);
        let mut w = 1.0;
        if self.negative.contains(&k) {
            w *= self.w_neg;
        }
        if self.middle.contains(&k) {
            w *= self.w_mid;
        }
        w
    }

    /// `logit += ln w`, i.e. each probability times its weight, renormalized.
    pub fn apply(&self, dist: &TokenDistribution) -> Result<TokenDistribution, DecodeError> {
        Ok(dist.map_logits(|c| c.logit + self.weight(&c.text).ln())?)
    }
}

pub struct WeightedToken {
    table: TokenWeightTable,
}

impl WeightedToken {
    pub fn new(table: TokenWeightTable) -> Self {
        Self { table }
    }
}

impl Processor for WeightedToken {
    fn name(&self) -> &'static str {
        "weighted_token"
    }

    fn transform(&mut self, dist: TokenDistribution, _ctx: &StepContext<'_>) -> Result<TokenDistribution, DecodeError> {
        self.table.apply(&dist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::testutil::{frame, prob};
    use proptest::prelude::*;

    #[test]
    fn arithmetic_example() {
        let t = TokenWeightTable::new(vec!["awful".into()], 0.3, vec!["battery".into()], 2.0).unwrap();
        let d = t.apply(&frame(&[("awful", 0.5), (" battery", 0.3), ("ok", 0.2)])).unwrap();
        assert!((prob(&d, "awful") - 0.1579).abs() < 1e-4);
        assert!((prob(&d, " battery") - 0.6316).abs() < 1e-4);
        assert!((prob(&d, "ok") - 0.2105).abs() < 1e-4);
    }

    #[test]
    fn unit_weights_are_identity_and_common_factor_cancels() {
        let f = frame(&[("a", 0.5), ("b", 0.3), ("c", 0.2)]);
        let t = TokenWeightTable::new(vec![], 0.3, vec![], 2.0).unwrap();
        let d = t.apply(&f).unwrap();
        for c in f.candidates() {
            assert!((prob(&d, &c.text) - c.prob).abs() < 1e-12);
        }
        let t = TokenWeightTable::new(vec!["a".into(), "b".into()], 0.3, vec![], 2.0).unwrap();
        let d = t.apply(&f).unwrap();
        assert!((prob(&d, "a") / prob(&d, "b") - 0.5 / 0.3).abs() < 1e-9);
        assert!(TokenWeightTable::new(vec![], 0.0, vec![], 2.0).is_err());
    }

    #[test]
    fn both_sets_multiply() {
        let t = TokenWeightTable::new(vec!["slow".into()], 0.3, vec!["slow".into()], 2.0).unwrap();
        assert!((t.weight(" Slow") - 0.6).abs() < 1e-12);
        assert_eq!(t.weight("slowly"), 1.0);
    }

    #[test]
    fn lexicon_loads() {
        let lex = default_negative_lexicon();
        assert!(lex.contains(&"terrible".to_string()));
        assert!(lex.iter().all(|w| !w.starts_with('#')));
    }

    proptest! {
        #[test]
        fn valid_and_order_preserving(ps in prop::collection::vec(0.01f64..1.0, 2..40), mask in prop::collection::vec(0u8..3, 40)) {
            let names: Vec<String> = (0..ps.len()).map(|i| format!("t{i}")).collect();
            let toks: Vec<(&str, f64)> = names.iter().map(String::as_str).zip(ps.iter().copied()).collect();
            let f = frame(&toks);
            let neg = names.iter().enumerate().filter(|(i, _)| mask[*i] == 1).map(|(_, n)| n.clone()).collect();
            let mid = names.iter().enumerate().filter(|(i, _)| mask[*i] == 2).map(|(_, n)| n.clone()).collect();
            let t = TokenWeightTable::new(neg, 0.3, mid, 2.0).unwrap();
            let d = t.apply(&f).unwrap();
            prop_assert!(d.validate().is_ok());
            for a in f.candidates() {
                for b in f.candidates() {
                    if t.weight(&a.text) == t.weight(&b.text) && a.prob > b.prob {
                        prop_assert!(prob(&d, &a.text) >= prob(&d, &b.text));
                    }
                }
            }
        }
    }
}
