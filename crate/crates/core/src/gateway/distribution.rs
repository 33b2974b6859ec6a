use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

/// Frames keep at most this many candidates; the dropped mass is recorded
/// in [`TokenDistribution::truncated_mass`].
pub const MAX_CANDIDATES: usize = 64;

const SUM_TOLERANCE: f64 = 1e-6;
const SOFTMAX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DistributionError {
    #[error("distribution has no candidates")]
    Empty,
    #[error("logit for token {0} is NaN or +inf")]
    BadLogit(TokenId),
    #[error("every candidate has logit -inf")]
    NoFiniteLogit,
    #[error("invalid distribution: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: TokenId,
    pub text: String,
    pub logit: f64,
    pub prob: f64,
}

/// One decoding step: candidates sorted by descending probability, where
/// probabilities are the softmax of the logits over the kept candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution")]
pub struct TokenDistribution {
    pub step_index: usize,
    candidates: Vec<Candidate>,
    pub truncated_mass: f64,
}

#[derive(Deserialize)]
struct RawDistribution {
    step_index: usize,
    candidates: Vec<Candidate>,
    #[serde(default)]
    truncated_mass: f64,
}

impl TryFrom<RawDistribution> for TokenDistribution {
    type Error = DistributionError;

    fn try_from(raw: RawDistribution) -> Result<Self, Self::Error> {
        let d = TokenDistribution {
            step_index: raw.step_index,
            candidates: raw.candidates,
            truncated_mass: raw.truncated_mass,
        };
        d.validate()?;
        Ok(d)
    }
}

fn softmax(logits: &[f64]) -> Result<Vec<f64>, DistributionError> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(DistributionError::NoFiniteLogit);
    }
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

impl TokenDistribution {
    /// Builds a frame from raw logits, keeping the top [`MAX_CANDIDATES`].
    pub fn from_logits(
        step_index: usize,
        tokens: impl IntoIterator<Item = (TokenId, String, f64)>,
    ) -> Result<Self, DistributionError> {
        let mut cands: Vec<Candidate> = tokens
            .into_iter()
            .map(|(id, text, logit)| Candidate { id, text, logit, prob: 0.0 })
            .collect();
        if cands.is_empty() {
            return Err(DistributionError::Empty);
        }
        if let Some(c) = cands.iter().find(|c| c.logit.is_nan() || c.logit == f64::INFINITY) {
            return Err(DistributionError::BadLogit(c.id));
        }
        let probs = softmax(&cands.iter().map(|c| c.logit).collect::<Vec<_>>())?;
        for (c, p) in cands.iter_mut().zip(probs) {
            c.prob = p;
        }
        sort_candidates(&mut cands);
        let mut truncated_mass = 0.0;
        if cands.len() > MAX_CANDIDATES {
            truncated_mass = cands[MAX_CANDIDATES..].iter().map(|c| c.prob).sum();
            cands.truncate(MAX_CANDIDATES);
        }
        let mut d = Self {
            step_index,
            candidates: cands,
            truncated_mass,
        };
        d.renormalize()?;
        Ok(d)
    }

    fn renormalize(&mut self) -> Result<(), DistributionError> {
        let probs = softmax(&self.candidates.iter().map(|c| c.logit).collect::<Vec<_>>())?;
        for (c, p) in self.candidates.iter_mut().zip(probs) {
            c.prob = p;
        }
        sort_candidates(&mut self.candidates);
        Ok(())
    }

    /// New frame whose logits are `f(candidate)`; probabilities recomputed.
    pub fn map_logits(&self, mut f: impl FnMut(&Candidate) -> f64) -> Result<Self, DistributionError> {
        let mut out = self.clone();
        for c in out.candidates.iter_mut() {
            let z = f(c);
            if z.is_nan() || z == f64::INFINITY {
                return Err(DistributionError::BadLogit(c.id));
            }
            c.logit = z;
        }
        out.renormalize()?;
        Ok(out)
    }

    /// `softmax(z / temperature)`.
    pub fn tempered(&self, temperature: f64) -> Result<Self, DistributionError> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(DistributionError::Invalid(format!("temperature {temperature}")));
        }
        self.map_logits(|c| c.logit / temperature)
    }

    pub fn at_step(mut self, step_index: usize) -> Self {
        self.step_index = step_index;
        self
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn top(&self) -> &Candidate {
        &self.candidates[0]
    }

    pub fn get(&self, id: TokenId) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.id == id)
    }

    pub fn position(&self, id: TokenId) -> Option<usize> {
        self.candidates.iter().position(|c| c.id == id)
    }

    pub fn validate(&self) -> Result<(), DistributionError> {
        if self.candidates.is_empty() {
            return Err(DistributionError::Empty);
        }
        let mut sum = 0.0;
        for c in &self.candidates {
            if !(c.prob >= 0.0) || !c.prob.is_finite() {
                return Err(DistributionError::Invalid(format!("probability {} for token {}", c.prob, c.id)));
            }
            if c.logit.is_nan() || c.logit == f64::INFINITY {
                return Err(DistributionError::BadLogit(c.id));
            }
            sum += c.prob;
        }
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistributionError::Invalid(format!("probabilities sum to {sum}")));
        }
        if self.candidates.windows(2).any(|w| w[0].prob < w[1].prob) {
            return Err(DistributionError::Invalid("candidates not sorted by probability".into()));
        }
        let expected = softmax(&self.candidates.iter().map(|c| c.logit).collect::<Vec<_>>())?;
        for (c, p) in self.candidates.iter().zip(expected) {
            if (c.prob - p).abs() > SOFTMAX_TOLERANCE {
                return Err(DistributionError::Invalid(format!(
                    "token {} has probability {} but softmax gives {p}",
                    c.id, c.prob
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.truncated_mass) {
            return Err(DistributionError::Invalid(format!("truncated mass {}", self.truncated_mass)));
        }
        Ok(())
    }
}

fn sort_candidates(c: &mut [Candidate]) {
    c.sort_by(|a, b| b.prob.total_cmp(&a.prob).then(a.id.cmp(&b.id)));
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(logits: &[f64]) -> TokenDistribution {
        TokenDistribution::from_logits(
            0,
            logits.iter().enumerate().map(|(i, &z)| (i as TokenId, format!("t{i}"), z)),
        )
        .unwrap()
    }

    #[test]
    fn uniform_weights() {
        let d = frame(&[0.0, 0.0]);
        assert!((d.candidates()[0].prob - 0.5).abs() < 1e-12);
        assert!((d.candidates()[1].prob - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tempered_matches_definition() {
        let z = [1.0, 2.0, 0.5];
        let t = 0.7;
        let d = frame(&z).tempered(t).unwrap();
        let norm: f64 = z.iter().map(|v| (v / t).exp()).sum();
        for c in d.candidates() {
            let want = (z[c.id as usize] / t).exp() / norm;
            assert!((c.prob - want).abs() < 1e-12);
        }
    }

    #[test]
    fn truncates_to_top_64() {
        let z: Vec<f64> = (0..100).map(|i| -(i as f64) * 0.05).collect();
        let d = frame(&z);
        assert_eq!(d.len(), MAX_CANDIDATES);
        assert!(d.truncated_mass > 0.0);
        assert_eq!(d.top().id, 0);
        d.validate().unwrap();
    }

    #[test]
    fn neg_inf_logits_get_zero_mass() {
        let d = frame(&[0.0, f64::NEG_INFINITY]);
        assert_eq!(d.candidates()[1].prob, 0.0);
        d.validate().unwrap();
        assert_eq!(
            TokenDistribution::from_logits(0, [(0, "a".into(), f64::NEG_INFINITY)]),
            Err(DistributionError::NoFiniteLogit)
        );
        assert!(TokenDistribution::from_logits(0, [(0, "a".into(), f64::NAN)]).is_err());
    }

    #[test]
    fn deserialize_rejects_invalid() {
        let bad = r#"{"step_index":0,"candidates":[{"id":0,"text":"a","logit":0.0,"prob":0.9}]}"#;
        assert!(serde_json::from_str::<TokenDistribution>(bad).is_err());
        let good = serde_json::to_string(&frame(&[0.3, 0.1, -2.0])).unwrap();
        assert!(serde_json::from_str::<TokenDistribution>(&good).is_ok());
    }

    proptest! {
        #[test]
        fn random_logits_give_valid_frames(z in prop::collection::vec(-30.0f64..30.0, 1..100)) {
            let d = frame(&z);
            prop_assert!(d.validate().is_ok());
            let total: f64 = d.candidates().iter().map(|c| c.prob).sum();
            prop_assert!((total - 1.0).abs() <= 1e-6);
        }
    }
}
