use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::template::{extract_after_marker, extract_final_summary, render, Bindings, TemplateError};
use super::Strategy;
use crate::corpus::{split_by_token_counts, split_thirds, CorpusError, Document};
use crate::decoding::{generate_with_processors, Chooser, DecodeError, GenerationError, Processor, ProcessorSpec};
use crate::embedding::{cosine, Embedder};
use crate::gateway::{Gateway, GatewayError, GenerationConfig};
use crate::{rng, text};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{stage}: {source}")]
    Call {
        stage: String,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Decode(#[from] GenerationError),
    #[error(transparent)]
    Processor(#[from] DecodeError),
    #[error("salience provider {provider}: {reason}")]
    Salience { provider: String, reason: String },
    #[error("document {id} has {found} segments; attention sort needs at least 2")]
    TooFewSegments { id: String, found: usize },
    #[error("summary budget must be at least 3 tokens, got {0}")]
    BadBudget(usize),
    #[error("strategy {0} does not apply to this task")]
    Unsupported(Strategy),
    #[error("strategy knowledge_boundary needs a knowledge cutoff")]
    MissingCutoff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub stage: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryOutput {
    pub summary: String,
    /// Intermediate outputs (drafts, partials, deviations) in call order.
    pub stages: Vec<Stage>,
    /// Non-fatal conditions worth reporting, e.g. a shuffle that was a no-op.
    pub flags: Vec<String>,
}

/// Token budgets for beginning/middle/end: 33% of the total (floored, at
/// least 1) for each outer third, the rest to the middle.
pub fn budget_allocation(total: usize) -> Result<[usize; 3], StrategyError> {
    if total < 3 {
        return Err(StrategyError::BadBudget(total));
    }
    let outer = (total * 33 / 100).max(1);
    Ok([outer, total - 2 * outer, outer])
}

/// Three chunks of `floor(n/3)` whitespace tokens, the last taking the remainder.
pub fn ensemble_chunks(doc: &Document) -> Result<Vec<String>, StrategyError> {
    let n = text::whitespace_spans(&doc.text).len();
    if n < 3 {
        return Err(CorpusError::TooShort {
            id: doc.id.clone(),
            units: n,
            needed: 3,
        }
        .into());
    }
    let c = n / 3;
    Ok(split_by_token_counts(&doc.text, &[c, c, n - 2 * c]))
}

/// Scores segments for attention sort; higher means more attended.
pub trait SalienceProvider: Send + Sync {
    fn id(&self) -> String;
    fn score(&self, summarizer: &Summarizer<'_>, segments: &[String]) -> Result<Vec<f64>, StrategyError>;
}

/// Proxy salience: cosine between each segment and a zero-shot draft
/// summary of the current ordering. Stands in for attention weights.
pub struct DraftSimilarity<'a> {
    pub embedder: &'a Embedder,
}

impl SalienceProvider for DraftSimilarity<'_> {
    fn id(&self) -> String {
        format!("draft-similarity-proxy:{}", self.embedder.provider_id())
    }

    fn score(&self, s: &Summarizer<'_>, segments: &[String]) -> Result<Vec<f64>, StrategyError> {
        let err = |e: crate::embedding::EmbeddingError| StrategyError::Salience {
            provider: self.id(),
            reason: e.to_string(),
        };
        let prompt = render(
            "baseline_summarize",
            &Bindings::new().text("DOCUMENT_TEXT", segments.join("\n\n")),
        )?;
        let draft = extract_final_summary(&s.call("salience draft", &prompt, &s.options.config)?);
        if draft.is_empty() {
            return Err(StrategyError::Salience {
                provider: self.id(),
                reason: "empty draft".into(),
            });
        }
        let d = self.embedder.embed(&draft).map_err(err)?;
        segments
            .iter()
            .map(|seg| {
                let v = self.embedder.embed(seg).map_err(err)?;
                Ok(cosine(&d, &v).unwrap_or(0.0))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummarizerOptions {
    pub config: GenerationConfig,
    /// Total token budget split across thirds by weighted summaries.
    pub summary_budget: usize,
    pub shuffle_seed: u64,
    pub attention_iterations: usize,
    pub rewrite_max_tokens: usize,
    /// Replaces the decode-family strategy's default processor chain.
    pub processors: Option<Vec<ProcessorSpec>>,
}

impl Default for SummarizerOptions {
    fn default() -> Self {
        Self {
            config: GenerationConfig::default(),
            summary_budget: 150,
            shuffle_seed: 42,
            attention_iterations: 2,
            rewrite_max_tokens: 300,
            processors: None,
        }
    }
}

pub struct Summarizer<'a> {
    gateway: &'a Gateway,
    model: String,
    pub options: SummarizerOptions,
    salience: Option<&'a dyn SalienceProvider>,
}

impl<'a> Summarizer<'a> {
    pub fn new(gateway: &'a Gateway, model: &str, options: SummarizerOptions) -> Self {
        Self {
            gateway,
            model: model.to_string(),
            options,
            salience: None,
        }
    }

    pub fn with_salience(mut self, provider: &'a dyn SalienceProvider) -> Self {
        self.salience = Some(provider);
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn call(&self, stage: &str, prompt: &str, cfg: &GenerationConfig) -> Result<String, StrategyError> {
        self.gateway
            .complete(&self.model, prompt, cfg)
            .map_err(|source| StrategyError::Call {
                stage: stage.to_string(),
                source,
            })
    }

    /// The processor chain a decode-family strategy runs with.
    pub fn processor_chain(&self, strategy: Strategy) -> Option<Vec<ProcessorSpec>> {
        let default = strategy.processor()?;
        Some(self.options.processors.clone().unwrap_or_else(|| vec![default]))
    }

    pub fn summarize(&self, doc: &Document, strategy: Strategy) -> Result<SummaryOutput, StrategyError> {
        let mut out = SummaryOutput {
            summary: String::new(),
            stages: Vec::new(),
            flags: Vec::new(),
        };
        let cfg = &self.options.config;
        let doc_bind = || Bindings::new().text("DOCUMENT_TEXT", doc.text.as_str());
        out.summary = match strategy {
            Strategy::Baseline => self.single("baseline_summarize", &doc_bind())?,
            Strategy::SelfAwareness => self.single("self_awareness", &doc_bind())?,
            Strategy::ChainOfThought => self.single("chain_of_thought", &doc_bind())?,
            Strategy::Cloze => self.single("cloze", &doc_bind())?,
            Strategy::CognitiveCounterfactual => {
                let draft = self.single("baseline_summarize", &doc_bind())?;
                out.stage("draft", &draft);
                let b = doc_bind().text("DRAFT_SUMMARY", draft.as_str());
                let raw = self.call("deviations", &render("cognitive_counterfactual_deviations", &b)?, cfg)?;
                let deviations = extract_after_marker(&raw, "DEVIATIONS:");
                out.stage("deviations", &deviations);
                let b = b.text("LIST_OF_SIMULATED_BIAS_DEVIATIONS", deviations);
                extract_final_summary(&self.call("final revision", &render("cognitive_counterfactual", &b)?, cfg)?)
            }
            Strategy::SelfHelpDebias => {
                let draft = self.single("baseline_summarize", &doc_bind())?;
                out.stage("draft", &draft);
                let prompt = render("self_help_debias", &Bindings::new().text("DRAFT_SUMMARY", draft))?;
                let rewrite_cfg = cfg.with_max_new_tokens(self.options.rewrite_max_tokens);
                extract_final_summary(&self.call("rewrite", &prompt, &rewrite_cfg)?)
            }
            Strategy::PartialSummariesEnsemble => {
                let mut partials = Vec::new();
                for (i, chunk) in ensemble_chunks(doc)?.iter().enumerate() {
                    let prompt = render(
                        "baseline_summarize",
                        &Bindings::new().text("DOCUMENT_TEXT", chunk.trim()),
                    )?;
                    let p = extract_final_summary(&self.call(&format!("chunk {}", i + 1), &prompt, cfg)?);
                    out.stage(&format!("partial {}", i + 1), &p);
                    partials.push(p);
                }
                let prompt = render("partial_summaries_merge", &Bindings::new().list("PARTIAL_SUMMARY", partials))?;
                extract_final_summary(&self.call("merge", &prompt, cfg)?)
            }
            Strategy::WeightedSummaries => {
                let budgets = budget_allocation(self.options.summary_budget)?;
                let triple = split_thirds(doc)?;
                let mut partials = Vec::new();
                for (i, (part, budget)) in triple.parts().iter().zip(budgets).enumerate() {
                    let b = Bindings::new()
                        .text("PORTION_TOKEN_BUDGET", budget.to_string())
                        .text("CHUNK_TEXT", part.trim());
                    let prompt = render("weighted_summaries_chunk", &b)?;
                    let p = extract_final_summary(&self.call(&format!("chunk {}", i + 1), &prompt, cfg)?);
                    out.stage(&format!("partial {}", i + 1), &p);
                    partials.push(p);
                }
                partials.join(" ")
            }
            Strategy::AttentionSort => {
                let provider = self.salience.ok_or_else(|| StrategyError::Salience {
                    provider: "none".into(),
                    reason: "no salience provider configured".into(),
                })?;
                let mut segments = text::paragraphs(&doc.text);
                if segments.len() < 2 {
                    segments = text::period_sentences(&doc.text);
                    out.flags.push("attention_sort: single paragraph, sorted at sentence granularity".into());
                }
                if segments.len() < 2 {
                    return Err(StrategyError::TooFewSegments {
                        id: doc.id.clone(),
                        found: segments.len(),
                    });
                }
                for _ in 0..self.options.attention_iterations {
                    let scores = provider.score(self, &segments)?;
                    if scores.len() != segments.len() {
                        return Err(StrategyError::Salience {
                            provider: provider.id(),
                            reason: format!("{} scores for {} segments", scores.len(), segments.len()),
                        });
                    }
                    segments = sort_by_salience(segments, &scores);
                }
                out.stage("order", &segments.join("\n\n"));
                let prompt = render("attention_sort", &Bindings::new().list("SORTED_SEGMENT", segments))?;
                extract_final_summary(&self.call("final", &prompt, cfg)?)
            }
            Strategy::PositionInvariantShuffle => {
                let mut sentences = text::period_sentences(&doc.text);
                if sentences.len() < 2 {
                    out.flags.push("position_invariant_shuffle: single sentence, order unchanged".into());
                } else {
                    rng::shuffle(&mut sentences, self.options.shuffle_seed);
                }
                let shuffled = sentences.join(" ");
                let prompt = render(
                    "position_invariant_shuffle",
                    &Bindings::new().text("SHUFFLED_DOCUMENT_TEXT", shuffled),
                )?;
                extract_final_summary(&self.call("summary", &prompt, cfg)?)
            }
            Strategy::ForcedBalancedCoverage
            | Strategy::WeightedTokenDecoding
            | Strategy::Mirostat
            | Strategy::RejectionSampling
            | Strategy::SelfDebias
            | Strategy::ExplanationGuard => {
                let specs = self.processor_chain(strategy).expect("decode strategy");
                let triple = split_thirds(doc)?;
                let mut procs: Vec<Box<dyn Processor>> =
                    specs.iter().map(|s| s.build(&triple)).collect::<Result<_, _>>()?;
                let mut chooser = if cfg.sampling_enabled || specs.iter().any(ProcessorSpec::samples) {
                    Chooser::sample(cfg.seed)
                } else {
                    Chooser::Greedy
                };
                let prompt = render("baseline_summarize", &doc_bind())?;
                let generation =
                    generate_with_processors(self.gateway, &self.model, &prompt, &mut procs, &mut chooser, cfg)?;
                out.flags.extend(generation.incidents);
                extract_final_summary(&generation.text)
            }
            Strategy::CotCalibration | Strategy::KnowledgeBoundary | Strategy::EpistemicTagging => {
                return Err(StrategyError::Unsupported(strategy))
            }
        };
        Ok(out)
    }

    fn single(&self, name: &str, bindings: &Bindings) -> Result<String, StrategyError> {
        let prompt = render(name, bindings)?;
        Ok(extract_final_summary(&self.call(name, &prompt, &self.options.config)?))
    }
}

impl SummaryOutput {
    fn stage(&mut self, name: &str, output: &str) {
        self.stages.push(Stage {
            stage: name.to_string(),
            output: output.to_string(),
        });
    }
}

/// Stable ascending sort: least salient first.
pub(crate) fn sort_by_salience(segments: Vec<String>, scores: &[f64]) -> Vec<String> {
    let mut idx: Vec<usize> = (0..segments.len()).collect();
    idx.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut slots: Vec<Option<String>> = segments.into_iter().map(Some).collect();
    idx.into_iter().map(|i| slots[i].take().unwrap()).collect()
}
