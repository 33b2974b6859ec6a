use std::collections::HashMap;

use super::{DecodeError, Processor, StepContext, TokenDistribution, TokenId};
use crate::text::{Tokenizer, WordPunctTokenizer};

/// Names the attributes to steer away from; prepended to the context for
/// the bias pass.
pub const DEFAULT_BIAS_PREFIX: &str =
    "The following summary covers only the opening of the text, skips its middle, and reverses its sentiment:";

const MAX_PREFIX_TOKENS: usize = 30;

/// Compares the main frame with a frame computed on bias-prefix + context
/// and scales down tokens the biased pass prefers: for `d = p_main - p_bias
/// < 0` the probability is multiplied by `exp(lambda * d)`. The bias frame
/// is refreshed every `refresh_every` steps; tokens missing from it have
/// `p_bias = 0`.
pub struct SelfDebias {
    bias_prefix: String,
    pub lambda: f64,
    pub refresh_every: usize,
    bias: Option<HashMap<TokenId, f64>>,
    pub bias_passes: usize,
}

impl SelfDebias {
    pub fn new(bias_prefix: &str, lambda: f64, refresh_every: usize) -> Result<Self, DecodeError> {
        let bad = |reason: String| DecodeError::BadParameter {
            processor: "self_debias",
            reason,
        };
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(bad(format!("lambda must be positive, got {lambda}")));
        }
        if refresh_every == 0 {
            return Err(bad("refresh_every must be at least 1".into()));
        }
        let n = WordPunctTokenizer.count(bias_prefix);
        if n == 0 || n >= MAX_PREFIX_TOKENS {
            return Err(bad(format!("bias prefix must have 1..{MAX_PREFIX_TOKENS} tokens, has {n}")));
        }
        Ok(Self {
            bias_prefix: bias_prefix.to_string(),
            lambda,
            refresh_every,
            bias: None,
            bias_passes: 0,
        })
    }

    pub fn set_bias_frame(&mut self, frame: &TokenDistribution) {
        self.bias = Some(frame.candidates().iter().map(|c| (c.id, c.prob)).collect());
    }

    pub fn apply(&self, main: &TokenDistribution) -> Result<TokenDistribution, DecodeError> {
        let Some(bias) = &self.bias else {
            return Err(DecodeError::Processor {
                processor: "self_debias",
                reason: "no bias frame".into(),
            });
        };
        Ok(main.map_logits(|c| {
            let delta = c.prob - bias.get(&c.id).copied().unwrap_or(0.0);
            if delta < 0.0 {
                c.logit + self.lambda * delta
            } else {
                c.logit
            }
        })?)
    }

    fn refresh(&mut self, ctx: &StepContext<'_>) -> Result<(), DecodeError> {
        let mut context = ctx.gateway.encode(ctx.model, &self.bias_prefix)?;
        context.extend_from_slice(ctx.prompt_ids);
        context.extend_from_slice(ctx.generated_ids);
        let frame = ctx.gateway.next_distribution(ctx.model, &context)?;
        self.set_bias_frame(&frame);
        self.bias_passes += 1;
        Ok(())
    }
}

impl Processor for SelfDebias {
    fn name(&self) -> &'static str {
        "self_debias"
    }

    fn transform(&mut self, dist: TokenDistribution, ctx: &StepContext<'_>) -> Result<TokenDistribution, DecodeError> {
        if self.bias.is_none() || ctx.step.is_multiple_of(self.refresh_every) {
            self.refresh(ctx)?;
        }
        self.apply(&dist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::testutil::frame;
    use proptest::prelude::*;

    fn debias(bias: &[(&str, f64)]) -> SelfDebias {
        let mut d = SelfDebias::new(DEFAULT_BIAS_PREFIX, 10.0, 4).unwrap();
        d.set_bias_frame(&frame(bias));
        d
    }

    /// Unnormalized mass after scaling, relative to the untouched tokens.
    fn scaled_mass(main: &TokenDistribution, out: &TokenDistribution, id: TokenId, anchor: TokenId) -> f64 {
        main.get(anchor).unwrap().prob * out.get(id).unwrap().prob / out.get(anchor).unwrap().prob
    }

    #[test]
    fn substitution_example() {
        // ids: 0 -> "a", 1 -> "b"
        let main = frame(&[("a", 0.4), ("b", 0.6)]);
        let d = debias(&[("a", 0.5), ("b", 0.5)]);
        let out = d.apply(&main).unwrap();
        assert!((scaled_mass(&main, &out, 0, 1) - 0.1472).abs() < 1e-4);
    }

    #[test]
    fn equal_frames_unchanged() {
        let main = frame(&[("a", 0.4), ("b", 0.6)]);
        let out = debias(&[("a", 0.4), ("b", 0.6)]).apply(&main).unwrap();
        for c in main.candidates() {
            assert!((out.get(c.id).unwrap().prob - c.prob).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_long_prefix_and_bad_lambda() {
        let long = "word ".repeat(30);
        assert!(SelfDebias::new(&long, 10.0, 4).is_err());
        assert!(SelfDebias::new("short", 0.0, 4).is_err());
        assert!(SelfDebias::new("short", 1.0, 0).is_err());
        assert!(WordPunctTokenizer.count(DEFAULT_BIAS_PREFIX) < MAX_PREFIX_TOKENS);
    }

    proptest! {
        #[test]
        fn scaling_is_monotone_and_never_raises_mass(
            main in prop::collection::vec(0.01f64..1.0, 3..12),
            bias in prop::collection::vec(0.01f64..1.0, 12),
        ) {
            let names: Vec<String> = (0..main.len()).map(|i| format!("t{i}")).collect();
            let m = frame(&names.iter().map(String::as_str).zip(main.iter().copied()).collect::<Vec<_>>());
            let b = frame(&names.iter().map(String::as_str).zip(bias.iter().copied()).collect::<Vec<_>>());
            let mut d = SelfDebias::new("bias", 10.0, 4).unwrap();
            d.set_bias_frame(&b);
            let out = d.apply(&m).unwrap();
            prop_assert!(out.validate().is_ok());
            let mut factors = Vec::new();
            for c in m.candidates() {
                let delta = c.prob - b.get(c.id).unwrap().prob;
                let raw = (out.get(c.id).unwrap().logit - c.logit).exp();
                if delta < 0.0 {
                    prop_assert!(raw <= 1.0);
                    prop_assert!((raw - (10.0 * delta).exp()).abs() < 1e-9);
                } else {
                    prop_assert!((raw - 1.0).abs() < 1e-12);
                }
                factors.push((delta, raw));
            }
            for (d1, f1) in &factors {
                for (d2, f2) in &factors {
                    if *d1 < *d2 - 1e-9 && *d1 < 0.0 {
                        prop_assert!(f1 < f2);
                    }
                }
            }
        }
    }
}
