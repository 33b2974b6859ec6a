//! Decoding-time interventions over per-step token distributions, and the
//! loop that applies them.

mod coverage;
mod debias;
mod guard;
mod mirostat;
mod weighted;

use rand::distr::{weighted::WeightedIndex, Distribution as _};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SegmentTriple;
use crate::gateway::{
    Candidate, DistributionError, Gateway, GatewayError, GenerationConfig, TokenDistribution, TokenId, STOP_TEXT,
};

pub use coverage::{CoverageState, ForcedCoverage, RejectionSampler};
pub use debias::{SelfDebias, DEFAULT_BIAS_PREFIX};
pub use guard::{ExplanationGuard, DEFAULT_DENY_LIST};
pub use mirostat::{mirostat_step, Mirostat, MirostatState};
pub use weighted::{default_negative_lexicon, TokenWeightTable, WeightedToken};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("chosen token {0} has zero probability; surprise undefined")]
    ZeroProbability(TokenId),
    #[error("invalid {processor} parameter: {reason}")]
    BadParameter { processor: &'static str, reason: String },
    #[error("{processor}: {reason}")]
    Processor { processor: &'static str, reason: String },
}

/// A failed stream, with whatever was generated before the failure.
#[derive(Debug, Error)]
#[error("generation failed at step {step} ({source}); partial output {partial:?}")]
pub struct GenerationError {
    pub step: usize,
    pub partial: String,
    pub processor: Option<&'static str>,
    #[source]
    pub source: DecodeError,
}

/// Read-only view of the stream handed to processors each step.
pub struct StepContext<'a> {
    pub step: usize,
    pub gateway: &'a Gateway,
    pub model: &'a str,
    pub prompt_ids: &'a [TokenId],
    pub generated_ids: &'a [TokenId],
    pub generated_text: &'a str,
}

/// One intervention. `transform` reshapes the frame (in logit space),
/// `select` may override the tentative choice, `observe` sees the token
/// finally emitted together with the frame it was drawn from.
pub trait Processor: Send {
    fn name(&self) -> &'static str;

    fn transform(&mut self, dist: TokenDistribution, _ctx: &StepContext<'_>) -> Result<TokenDistribution, DecodeError> {
        Ok(dist)
    }

    fn select(
        &mut self,
        _dist: &TokenDistribution,
        tentative: usize,
        _ctx: &StepContext<'_>,
    ) -> Result<usize, DecodeError> {
        Ok(tentative)
    }

    fn observe(
        &mut self,
        _chosen: &Candidate,
        _drawn_from: &TokenDistribution,
        _ctx: &StepContext<'_>,
    ) -> Result<(), DecodeError> {
        Ok(())
    }

    /// Advisory events (e.g. failed probes) since the last call.
    fn drain_incidents(&mut self) -> Vec<String> {
        Vec::new()
    }
}

pub enum Chooser {
    Greedy,
    Sample(Box<ChaCha8Rng>),
}

impl Chooser {
    pub fn sample(seed: u64) -> Self {
        Chooser::Sample(Box::new(ChaCha8Rng::seed_from_u64(seed)))
    }

    pub fn for_config(cfg: &GenerationConfig) -> Self {
        if cfg.sampling_enabled {
            Self::sample(cfg.seed)
        } else {
            Chooser::Greedy
        }
    }

    /// Index into `dist.candidates()`.
    pub fn choose(&mut self, dist: &TokenDistribution) -> usize {
        match self {
            Chooser::Greedy => 0,
            Chooser::Sample(rng) => {
                let w: Vec<f64> = dist.candidates().iter().map(|c| c.prob).collect();
                match WeightedIndex::new(&w) {
                    Ok(d) => d.sample(rng),
                    Err(_) => 0,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub tokens: Vec<TokenId>,
    pub steps: usize,
    pub stopped: bool,
    pub incidents: Vec<String>,
}

/// Runs next-distribution -> processors -> choice until the stop token or
/// `cfg.max_new_tokens`. Every intermediate frame is validated.
pub fn generate_with_processors(
    gateway: &Gateway,
    model: &str,
    prompt: &str,
    processors: &mut [Box<dyn Processor>],
    chooser: &mut Chooser,
    cfg: &GenerationConfig,
) -> Result<Generation, GenerationError> {
    let prompt_ids = gateway.encode(model, prompt).map_err(|e| GenerationError {
        step: 0,
        partial: String::new(),
        processor: None,
        source: e.into(),
    })?;
    let mut ids: Vec<TokenId> = Vec::new();
    let mut text = String::new();
    let mut incidents = Vec::new();
    let mut stopped = false;
    let mut steps = 0;
    for step in 0..cfg.max_new_tokens {
        let fail = |processor: Option<&'static str>, e: DecodeError, text: &str| GenerationError {
            step,
            partial: text.trim().to_string(),
            processor,
            source: e,
        };
        let context: Vec<TokenId> = prompt_ids.iter().chain(&ids).copied().collect();
        let ctx = StepContext {
            step,
            gateway,
            model,
            prompt_ids: &prompt_ids,
            generated_ids: &ids,
            generated_text: &text,
        };
        let mut dist = gateway
            .next_distribution(model, &context)
            .map_err(|e| fail(None, e.into(), &text))?
            .at_step(step);
        for p in processors.iter_mut() {
            dist = p.transform(dist, &ctx).map_err(|e| fail(Some(p.name()), e, &text))?;
            dist.validate().map_err(|e| fail(Some(p.name()), e.into(), &text))?;
        }
        let mut idx = chooser.choose(&dist);
        for p in processors.iter_mut() {
            idx = p.select(&dist, idx, &ctx).map_err(|e| fail(Some(p.name()), e, &text))?;
        }
        let chosen = dist.candidates()[idx].clone();
        for p in processors.iter_mut() {
            p.observe(&chosen, &dist, &ctx).map_err(|e| fail(Some(p.name()), e, &text))?;
            incidents.extend(p.drain_incidents());
        }
        steps = step + 1;
        if chosen.text == STOP_TEXT {
            stopped = true;
            break;
        }
        text.push_str(&chosen.text);
        ids.push(chosen.id);
    }
    Ok(Generation {
        text: text.trim().to_string(),
        tokens: ids,
        steps,
        stopped,
        incidents,
    })
}

fn default_target() -> f64 {
    2.0
}
fn default_eta() -> f64 {
    0.1
}
fn default_w_neg() -> f64 {
    0.3
}
fn default_w_mid() -> f64 {
    2.0
}
fn default_top_terms() -> usize {
    20
}
fn default_gamma() -> f64 {
    1.5
}
fn default_threshold() -> f64 {
    0.05
}
fn default_k() -> usize {
    5
}
fn default_lambda() -> f64 {
    10.0
}
fn default_refresh() -> usize {
    4
}
fn default_check_every() -> usize {
    5
}

/// Declarative processor entry as written in run configs and manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessorSpec {
    Mirostat {
        #[serde(default = "default_target")]
        target: f64,
        #[serde(default = "default_eta")]
        eta: f64,
    },
    WeightedToken {
        #[serde(default = "default_w_neg")]
        w_neg: f64,
        #[serde(default = "default_w_mid")]
        w_mid: f64,
        #[serde(default)]
        negative_lexicon: Option<Vec<String>>,
        #[serde(default)]
        middle_keywords: Option<Vec<String>>,
        #[serde(default = "default_top_terms")]
        top_terms: usize,
    },
    ForcedCoverage {
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    RejectionSampling {
        #[serde(default = "default_k")]
        k: usize,
    },
    SelfDebias {
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default = "default_refresh")]
        refresh_every: usize,
        #[serde(default)]
        bias_prefix: Option<String>,
    },
    ExplanationGuard {
        #[serde(default = "default_check_every")]
        check_every: usize,
        #[serde(default)]
        deny_list: Option<Vec<String>>,
    },
}

impl ProcessorSpec {
    pub fn mirostat() -> Self {
        ProcessorSpec::Mirostat {
            target: default_target(),
            eta: default_eta(),
        }
    }

    pub fn weighted_token() -> Self {
        ProcessorSpec::WeightedToken {
            w_neg: default_w_neg(),
            w_mid: default_w_mid(),
            negative_lexicon: None,
            middle_keywords: None,
            top_terms: default_top_terms(),
        }
    }

    pub fn forced_coverage() -> Self {
        ProcessorSpec::ForcedCoverage {
            gamma: default_gamma(),
            threshold: default_threshold(),
        }
    }

    pub fn rejection_sampling() -> Self {
        ProcessorSpec::RejectionSampling { k: default_k() }
    }

    pub fn self_debias() -> Self {
        ProcessorSpec::SelfDebias {
            lambda: default_lambda(),
            refresh_every: default_refresh(),
            bias_prefix: None,
        }
    }

    pub fn explanation_guard() -> Self {
        ProcessorSpec::ExplanationGuard {
            check_every: default_check_every(),
            deny_list: None,
        }
    }

    /// Whether this processor needs stochastic token choice.
    pub fn samples(&self) -> bool {
        matches!(self, ProcessorSpec::Mirostat { .. })
    }

    /// Instantiates the processor for one document.
    pub fn build(&self, source: &SegmentTriple) -> Result<Box<dyn Processor>, DecodeError> {
        Ok(match self {
            ProcessorSpec::Mirostat { target, eta } => Box::new(Mirostat::new(MirostatState::new(*target, *eta)?)),
            ProcessorSpec::WeightedToken {
                w_neg,
                w_mid,
                negative_lexicon,
                middle_keywords,
                top_terms,
            } => {
                let neg = negative_lexicon.clone().unwrap_or_else(default_negative_lexicon);
                let mid = match middle_keywords {
                    Some(m) => m.clone(),
                    None => TokenWeightTable::middle_keywords(source, *top_terms)?,
                };
                Box::new(WeightedToken::new(TokenWeightTable::new(neg, *w_neg, mid, *w_mid)?))
            }
            ProcessorSpec::ForcedCoverage { gamma, threshold } => {
                Box::new(ForcedCoverage::new(CoverageState::fit(source, *gamma, *threshold)?))
            }
            ProcessorSpec::RejectionSampling { k } => Box::new(RejectionSampler::new(
                CoverageState::fit(source, default_gamma(), default_threshold())?,
                *k,
            )?),
            ProcessorSpec::SelfDebias {
                lambda,
                refresh_every,
                bias_prefix,
            } => Box::new(SelfDebias::new(
                bias_prefix.as_deref().unwrap_or(DEFAULT_BIAS_PREFIX),
                *lambda,
                *refresh_every,
            )?),
            ProcessorSpec::ExplanationGuard { check_every, deny_list } => {
                let deny = deny_list
                    .clone()
                    .unwrap_or_else(|| DEFAULT_DENY_LIST.iter().map(|s| s.to_string()).collect());
                Box::new(ExplanationGuard::new(*check_every, &deny)?)
            }
        })
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn frame(tokens: &[(&str, f64)]) -> TokenDistribution {
        TokenDistribution::from_logits(
            0,
            tokens.iter().enumerate().map(|(i, (t, p))| (i as TokenId, t.to_string(), p.ln())),
        )
        .unwrap()
    }

    pub fn prob(d: &TokenDistribution, text: &str) -> f64 {
        d.candidates().iter().find(|c| c.text == text).unwrap().prob
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Backend, SyntheticBackend};
    use std::sync::Arc;

    fn synthetic() -> Gateway {
        Gateway::live(Arc::new(SyntheticBackend::demo(7)))
    }

    #[test]
    fn empty_chain_matches_greedy_decoding() {
        let g = synthetic();
        let cfg = GenerationConfig::default().with_max_new_tokens(60);
        let out = generate_with_processors(&g, "m", "review text here", &mut [], &mut Chooser::Greedy, &cfg).unwrap();
        let raw = SyntheticBackend::demo(7).complete("m", "review text here", &cfg).unwrap();
        assert_eq!(out.text, raw);
    }

    #[test]
    fn suppressed_token_never_appears() {
        let g = synthetic();
        let table = TokenWeightTable::new(vec!["bad".into()], 1e-9, vec![], 2.0).unwrap();
        let mut procs: Vec<Box<dyn Processor>> = vec![Box::new(WeightedToken::new(table))];
        let cfg = GenerationConfig::default().with_max_new_tokens(500);
        for seed in 0..3 {
            let out = generate_with_processors(&g, "m", "the product", &mut procs, &mut Chooser::sample(seed), &cfg)
                .unwrap();
            assert!(!out.text.split_whitespace().any(|w| w == "bad"), "{}", out.text);
        }
    }

    #[test]
    fn processed_run_replays_identically() {
        let dir = tempfile::tempdir().unwrap();
        let triple = SegmentTriple {
            beginning: "the battery is great ".into(),
            middle: "the screen is poor and slow ".into(),
            end: "price and quality overall".into(),
            boundaries: [21, 49],
        };
        let specs = [
            ProcessorSpec::mirostat(),
            ProcessorSpec::weighted_token(),
            ProcessorSpec::forced_coverage(),
            ProcessorSpec::self_debias(),
        ];
        let cfg = GenerationConfig::default().with_max_new_tokens(40);
        let run = |g: &Gateway| {
            let mut procs: Vec<Box<dyn Processor>> = specs.iter().map(|s| s.build(&triple).unwrap()).collect();
            generate_with_processors(g, "m", "summarize", &mut procs, &mut Chooser::sample(cfg.seed), &cfg).unwrap()
        };
        let recorded = run(&Gateway::record(Arc::new(SyntheticBackend::demo(1)), dir.path()).unwrap());
        let replay = Gateway::replay(dir.path()).unwrap();
        assert_eq!(run(&replay), recorded);
        assert_eq!(run(&replay), recorded);
        assert!(!recorded.text.is_empty());
    }

    #[test]
    fn chat_only_backend_is_a_capability_error() {
        struct ChatOnly;
        impl Backend for ChatOnly {
            fn describe(&self) -> String {
                "chat".into()
            }
            fn complete(&self, _: &str, _: &str, _: &GenerationConfig) -> Result<String, GatewayError> {
                Ok(String::new())
            }
        }
        let g = Gateway::live(Arc::new(ChatOnly));
        let err = generate_with_processors(
            &g,
            "m",
            "p",
            &mut [],
            &mut Chooser::Greedy,
            &GenerationConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err.source, DecodeError::Gateway(GatewayError::Unsupported { .. })));
    }

    #[test]
    fn spec_round_trips_with_defaults() {
        let s: ProcessorSpec = serde_json::from_str(r#"{"name":"forced_coverage"}"#).unwrap();
        assert_eq!(s, ProcessorSpec::forced_coverage());
        let s: ProcessorSpec = serde_json::from_str(r#"{"name":"mirostat","eta":0.2}"#).unwrap();
        assert_eq!(s, ProcessorSpec::Mirostat { target: 2.0, eta: 0.2 });
        assert!(serde_json::from_str::<ProcessorSpec>(r#"{"name":"mirostat","tau":1}"#).is_err());
    }
}
