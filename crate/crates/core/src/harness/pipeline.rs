use rayon::prelude::*;

use super::{HarnessError, RunConfig, RunRecord};
use crate::corpus::{load_corpus, load_pairs, split_thirds, Document, LoadOptions, NewsPair};
use crate::embedding::Embedder;
use crate::gateway::Gateway;
use crate::judge::{CalibrationMode, FramingLabel, Judge, JudgeError};
use crate::metrics::{AuditReport, CoverageSummary, FramingSummary, HallucinationSummary};
use crate::metrics::{
    beginning_dominance, confidence_tally, coverage, coverage_means, cutoff_gap_of, framing_change_fraction,
    hallucination_scores, primacy_score, transition_matrix, FramingPair, PredictionRecord,
};
use crate::strategies::{factcheck, DraftSimilarity, Strategy, Summarizer, Task};
use crate::text::WordPunctTokenizer;

/// Per-item records in input order, and the aggregate report.
#[derive(Debug, Clone, PartialEq)]
pub struct Audit {
    pub records: Vec<RunRecord>,
    pub report: AuditReport,
}

pub enum Inputs {
    Documents(Vec<Document>),
    Pairs(Vec<NewsPair>),
}

impl Inputs {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Documents(d) => d.len(),
            Inputs::Pairs(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs, HarnessError> {
    let d = &cfg.dataset;
    Ok(match cfg.task {
        Task::Summarization => {
            let opts = LoadOptions {
                source: d.source,
                max_tokens: d.max_tokens,
                sample_size: d.sample_size,
                seed: d.seed,
            };
            Inputs::Documents(load_corpus(&d.path, &opts, &WordPunctTokenizer)?)
        }
        Task::FactCheck => {
            let cutoff = cfg.cutoff()?.map(|c| c.date);
            Inputs::Pairs(load_pairs(&d.path, cutoff)?)
        }
    })
}

fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))
}

fn base_report(cfg: &RunConfig, n_input: usize, n_quarantined: usize) -> AuditReport {
    AuditReport {
        run_id: cfg.run_id(),
        model: cfg.model.clone(),
        dataset: cfg.dataset_id(),
        method: cfg.strategy.name().to_string(),
        n_input,
        n_quarantined,
        framing: None,
        coverage: None,
        hallucination: None,
        manifest: super::MANIFEST_FILE.to_string(),
    }
}

/// Labels a text; unparseable judge output leaves it unlabelled rather than
/// failing the item.
fn label(judge: &Judge<'_>, mode: CalibrationMode, text: &str) -> Result<Result<FramingLabel, String>, JudgeError> {
    match judge.label(text, mode) {
        Ok(l) => Ok(Ok(l)),
        Err(e @ (JudgeError::Unclassifiable { .. } | JudgeError::EmptyText)) => Ok(Err(e.to_string())),
        Err(e) => Err(e),
    }
}

fn summarize_one(
    cfg: &RunConfig,
    run_id: &str,
    doc: &Document,
    summarizer: &Summarizer<'_>,
    judge: &Judge<'_>,
    embedder: &Embedder,
) -> RunRecord {
    let quarantine = |stage: &str, reason: String| {
        log::warn!("{}: quarantined at {stage}: {reason}", doc.id);
        RunRecord::Quarantined {
            run_id: run_id.to_string(),
            item_id: doc.id.clone(),
            stage: stage.to_string(),
            reason,
        }
    };
    let triple = match split_thirds(doc) {
        Ok(t) => t,
        Err(e) => return quarantine("segment", e.to_string()),
    };
    let out = match summarizer.summarize(doc, cfg.strategy) {
        Ok(o) => o,
        Err(e) => return quarantine("summarize", e.to_string()),
    };
    let (context, summary) = match (label(judge, cfg.judge.mode, &doc.text), label(judge, cfg.judge.mode, &out.summary)) {
        (Ok(c), Ok(s)) => (c, s),
        (Err(e), _) | (_, Err(e)) => return quarantine("judge", e.to_string()),
    };
    let cov = match coverage(&doc.id, &out.summary, &triple, embedder) {
        Ok(c) => c,
        Err(e) => return quarantine("coverage", e.to_string()),
    };
    let judge_error = [&context, &summary].iter().find_map(|r| r.as_ref().err().cloned());
    RunRecord::Document {
        run_id: run_id.to_string(),
        doc_id: doc.id.clone(),
        summary: out.summary,
        stages: out.stages,
        flags: out.flags,
        context_label: context.ok(),
        summary_label: summary.ok(),
        judge_error,
        coverage: cov,
    }
}

/// Summarize, judge both sides, score coverage; then aggregate. Items that
/// fail are quarantined with a reason and never abort the run.
pub fn audit_summarization(
    cfg: &RunConfig,
    docs: &[Document],
    gateway: &Gateway,
    embedder: &Embedder,
) -> Result<Audit, HarnessError> {
    if docs.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let run_id = cfg.run_id();
    let salience = DraftSimilarity { embedder };
    let mut summarizer = Summarizer::new(gateway, &cfg.model, cfg.summarizer_options());
    if cfg.strategy == Strategy::AttentionSort {
        summarizer = summarizer.with_salience(&salience);
    }
    let judge = Judge::new(gateway, cfg.judge_model());
    let records: Vec<RunRecord> = pool(cfg)?.install(|| {
        docs.par_iter()
            .map(|d| summarize_one(cfg, &run_id, d, &summarizer, &judge, embedder))
            .collect()
    });

    let mut pairs = Vec::new();
    let mut triples = Vec::new();
    for r in &records {
        if let RunRecord::Document {
            doc_id,
            context_label,
            summary_label,
            coverage,
            ..
        } = r
        {
            if let (Some(c), Some(s)) = (context_label, summary_label) {
                pairs.push(FramingPair::new(doc_id.clone(), *c, *s));
            }
            triples.push(coverage.clone());
        }
    }
    let mut report = base_report(cfg, docs.len(), docs.len() - triples.len());
    if !pairs.is_empty() {
        report.framing = Some(FramingSummary {
            n: pairs.len(),
            unclassified: triples.len() - pairs.len(),
            phi_frame: framing_change_fraction(&pairs)?,
            transitions: transition_matrix(&pairs)?,
        });
    }
    if !triples.is_empty() {
        let [b, m, e] = coverage_means(&triples)?;
        report.coverage = Some(CoverageSummary {
            n: triples.len(),
            mean_s_b: b,
            mean_s_m: m,
            mean_s_e: e,
            alpha: cfg.alpha,
            psi_pri: primacy_score(&triples, cfg.alpha)?,
            ext_beginning_dominance: beginning_dominance(&triples)?,
        });
    }
    report.check().map_err(HarnessError::Inconsistent)?;
    Ok(Audit { records, report })
}

/// Fact-check both sides of every pair and score per horizon.
pub fn audit_factcheck(cfg: &RunConfig, pairs: &[NewsPair], gateway: &Gateway) -> Result<Audit, HarnessError> {
    if pairs.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let run_id = cfg.run_id();
    let cutoff = cfg.cutoff()?;
    let gen = cfg.generation.with_max_new_tokens(cfg.factcheck_max_new_tokens);
    let results: Vec<(RunRecord, Option<PredictionRecord>, usize)> = pool(cfg)?.install(|| {
        pairs
            .par_iter()
            .map(|p| match factcheck(p, cfg.strategy, cutoff.as_ref(), gateway, &cfg.model, &gen) {
                Ok(outcome) => {
                    let pred = outcome.prediction(p, cfg.failed_verdicts);
                    let failed = outcome.failed_sides();
                    let rec = RunRecord::Pair {
                        run_id: run_id.clone(),
                        pair_id: p.pair_id.clone(),
                        horizon: p.horizon,
                        outcome,
                        scored: pred.is_some(),
                    };
                    (rec, pred, failed)
                }
                Err(e) => {
                    log::warn!("{}: quarantined at factcheck: {e}", p.pair_id);
                    let rec = RunRecord::Quarantined {
                        run_id: run_id.clone(),
                        item_id: p.pair_id.clone(),
                        stage: "factcheck".into(),
                        reason: e.to_string(),
                    };
                    (rec, None, 0)
                }
            })
            .collect()
    });

    let failed_verdicts = results.iter().map(|r| r.2).sum();
    let preds: Vec<PredictionRecord> = results.iter().filter_map(|r| r.1.clone()).collect();
    let records: Vec<RunRecord> = results.into_iter().map(|r| r.0).collect();
    let mut report = base_report(cfg, pairs.len(), pairs.len() - preds.len());
    if !preds.is_empty() {
        let by_horizon = hallucination_scores(&preds)?;
        let confidence = if cfg.strategy == Strategy::EpistemicTagging {
            let tagged: Vec<PredictionRecord> = preds
                .iter()
                .filter(|p| p.confidence_true.is_some() && p.confidence_false.is_some())
                .cloned()
                .collect();
            (!tagged.is_empty()).then(|| confidence_tally(&tagged)).transpose()?
        } else {
            None
        };
        report.hallucination = Some(HallucinationSummary {
            cutoff_gap: cutoff_gap_of(&by_horizon),
            by_horizon,
            failed_verdicts,
            confidence,
        });
    }
    report.check().map_err(HarnessError::Inconsistent)?;
    Ok(Audit { records, report })
}
