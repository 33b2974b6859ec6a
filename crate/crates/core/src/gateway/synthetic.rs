//! Deterministic in-process backend exposing per-step distributions.

use rand::distr::{weighted::WeightedIndex, Distribution as _};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Backend, GatewayError, GenerationConfig, TokenDistribution, TokenId, STOP_TEXT};

/// Fixed vocabulary with base logits. Optional context-dependent jitter
/// (a hash of the seed, the last context token and the candidate) makes
/// generations vary with the prompt while staying reproducible.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    vocab: Vec<String>,
    logits: Vec<f64>,
    temperature: f64,
    jitter: f64,
    seed: u64,
}

impl SyntheticBackend {
    /// Unigram model: probability proportional to weight.
    pub fn unigram<S: AsRef<str>>(weights: &[(S, f64)]) -> Self {
        Self {
            vocab: weights.iter().map(|(t, _)| t.as_ref().to_string()).collect(),
            logits: weights.iter().map(|(_, w)| w.ln()).collect(),
            temperature: 1.0,
            jitter: 0.0,
            seed: 0,
        }
    }

    pub fn from_logits<S: AsRef<str>>(tokens: &[(S, f64)]) -> Self {
        Self {
            vocab: tokens.iter().map(|(t, _)| t.as_ref().to_string()).collect(),
            logits: tokens.iter().map(|(_, z)| *z).collect(),
            temperature: 1.0,
            jitter: 0.0,
            seed: 0,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_jitter(mut self, jitter: f64, seed: u64) -> Self {
        self.jitter = jitter;
        self.seed = seed;
        self
    }

    /// Review-flavoured vocabulary used by the CLI's `synthetic` backend.
    pub fn demo(seed: u64) -> Self {
        const WORDS: &[&str] = &[
            " the", " product", " works", " well", " battery", " screen", " price", " quality",
            " good", " great", " bad", " poor", " sound", " fast", " slow", " easy", " setup",
            " returned", " love", " disappointed", " cheap", " sturdy", " broke", " after",
            " weeks", " overall", " recommend", " not", " and", " but", " it", " is", ".",
            " charger", " cable", " app", " connection", " issues", " light", " storage",
        ];
        let mut tokens: Vec<(String, f64)> = WORDS
            .iter()
            .enumerate()
            .map(|(i, w)| (w.to_string(), 1.0 - 0.02 * i as f64))
            .collect();
        tokens.push((STOP_TEXT.to_string(), -0.5));
        Self::from_logits(&tokens).with_jitter(2.0, seed)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn id_of(&self, word: &str) -> TokenId {
        match self.vocab.iter().position(|v| v.trim() == word) {
            Some(i) => i as TokenId,
            None => {
                // Out-of-vocabulary words get stable ids above the vocabulary.
                let h = fnv1a(word.as_bytes());
                (1 << 24) + (h % (1 << 24)) as TokenId
            }
        }
    }

    fn frame(&self, context: &[TokenId]) -> Result<TokenDistribution, GatewayError> {
        let last = context.last().copied().unwrap_or(u32::MAX) as u64;
        let tokens = self.vocab.iter().enumerate().map(|(i, text)| {
            let mut z = self.logits[i];
            if self.jitter != 0.0 {
                let h = splitmix(self.seed ^ last.wrapping_mul(0x9E37_79B9) ^ ((i as u64) << 32));
                let u = (h >> 11) as f64 / (1u64 << 53) as f64;
                z += self.jitter * (2.0 * u - 1.0);
            }
            (i as TokenId, text.clone(), z / self.temperature)
        });
        TokenDistribution::from_logits(context.len(), tokens).map_err(|e| GatewayError::Protocol(e.to_string()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl Backend for SyntheticBackend {
    fn describe(&self) -> String {
        format!("synthetic:{}tok", self.vocab.len())
    }

    /// Decodes up to `max_new_tokens`: greedy, or seeded sampling when
    /// sampling is enabled.
    fn complete(&self, _model: &str, prompt: &str, cfg: &GenerationConfig) -> Result<String, GatewayError> {
        let mut context: Vec<TokenId> = prompt.split_whitespace().map(|w| self.id_of(w)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut out = String::new();
        for _ in 0..cfg.max_new_tokens {
            let frame = self.frame(&context)?;
            let chosen = if cfg.sampling_enabled {
                let weights: Vec<f64> = frame.candidates().iter().map(|c| c.prob).collect();
                let dist = WeightedIndex::new(&weights).map_err(|e| GatewayError::Protocol(e.to_string()))?;
                &frame.candidates()[dist.sample(&mut rng)]
            } else {
                frame.top()
            };
            if chosen.text == STOP_TEXT {
                break;
            }
            out.push_str(&chosen.text);
            context.push(chosen.id);
        }
        Ok(out.trim().to_string())
    }

    fn encode(&self, _model: &str, text: &str) -> Result<Vec<TokenId>, GatewayError> {
        Ok(text.split_whitespace().map(|w| self.id_of(w)).collect())
    }

    fn next_distribution(&self, _model: &str, context: &[TokenId]) -> Result<TokenDistribution, GatewayError> {
        self.frame(context)
    }
}
