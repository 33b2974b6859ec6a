use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::summarize::StrategyError;
use super::template::{render, template, Bindings};
use super::{Strategy, Task};
use crate::corpus::{Cutoff, NewsPair};
use crate::gateway::{Gateway, GenerationConfig};
use crate::metrics::{Confidence, PredictionRecord};

static VERDICT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(true|false)\b").unwrap());
static CONFIDENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\[\s*(high|low)\s+confidence\s*\]").unwrap());

/// First case-insensitive `true`/`false` word.
pub fn parse_verdict(raw: &str) -> Option<bool> {
    VERDICT.find(raw).map(|m| m.as_str().eq_ignore_ascii_case("true"))
}

pub fn parse_confidence(raw: &str) -> Option<Confidence> {
    CONFIDENCE.captures(raw).map(|c| {
        if c[1].eq_ignore_ascii_case("high") {
            Confidence::High
        } else {
            Confidence::Low
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    RepromptedOk,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reprompt_raw: Option<String>,
    pub verdict: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<Confidence>,
    pub status: ParseStatus,
}

/// How a failed parse is scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailedVerdicts {
    /// The failed side counts as answered wrongly.
    #[default]
    Incorrect,
    /// Pairs with a failed side are dropped from scoring.
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactcheckOutcome {
    pub pair_id: String,
    pub strategy: Strategy,
    pub true_side: VerdictRecord,
    pub falsified_side: VerdictRecord,
}

impl FactcheckOutcome {
    pub fn failed_sides(&self) -> usize {
        [&self.true_side, &self.falsified_side]
            .iter()
            .filter(|v| v.status == ParseStatus::Failed)
            .count()
    }

    /// The scored prediction, or `None` when excluded under `policy`.
    pub fn prediction(&self, pair: &NewsPair, policy: FailedVerdicts) -> Option<PredictionRecord> {
        if policy == FailedVerdicts::Exclude && self.failed_sides() > 0 {
            return None;
        }
        let ok = |v: &VerdictRecord| v.status != ParseStatus::Failed;
        let t = &self.true_side;
        let f = &self.falsified_side;
        Some(PredictionRecord {
            pair_id: pair.pair_id.clone(),
            horizon: pair.horizon,
            verdict_true: ok(t) && t.verdict == Some(true),
            verdict_false: !ok(f) || f.verdict == Some(true),
            confidence_true: t.confidence.filter(|_| ok(t)),
            confidence_false: f.confidence.filter(|_| ok(f)),
        })
    }
}

/// Instruction, blank line, then the statement.
pub fn factcheck_prompt(strategy: Strategy, cutoff: Option<&Cutoff>, statement: &str) -> Result<String, StrategyError> {
    let instruction = match strategy {
        Strategy::Baseline => render("factcheck_baseline", &Bindings::new())?,
        Strategy::CotCalibration => render("cot_calibration", &Bindings::new())?,
        Strategy::EpistemicTagging => render("epistemic_tagging", &Bindings::new())?,
        Strategy::KnowledgeBoundary => {
            let c = cutoff.ok_or(StrategyError::MissingCutoff)?;
            render("knowledge_boundary", &Bindings::new().text("knowledge_cutoff", c.label.as_str()))?
        }
        other => return Err(StrategyError::Unsupported(other)),
    };
    Ok(format!("{instruction}\n\nStatement: {statement}"))
}

fn strict_suffix(strategy: Strategy) -> &'static str {
    let name = if strategy == Strategy::EpistemicTagging {
        "epistemic_strict"
    } else {
        "factcheck_strict"
    };
    template(name).expect("bundled template").text
}

fn parse(strategy: Strategy, raw: &str) -> Option<(bool, Option<Confidence>)> {
    let verdict = parse_verdict(raw)?;
    let confidence = parse_confidence(raw);
    if strategy == Strategy::EpistemicTagging && confidence.is_none() {
        return None;
    }
    Some((verdict, confidence))
}

fn check_side(
    gateway: &Gateway,
    model: &str,
    strategy: Strategy,
    prompt: &str,
    cfg: &GenerationConfig,
    side: &str,
) -> Result<VerdictRecord, StrategyError> {
    let call = |p: &str| {
        gateway.complete(model, p, cfg).map_err(|source| StrategyError::Call {
            stage: side.to_string(),
            source,
        })
    };
    let raw = call(prompt)?;
    if let Some((v, c)) = parse(strategy, &raw) {
        return Ok(VerdictRecord {
            raw,
            reprompt_raw: None,
            verdict: Some(v),
            confidence: c,
            status: ParseStatus::Ok,
        });
    }
    let second = call(&format!("{prompt}\n\n{}", strict_suffix(strategy)))?;
    let parsed = parse(strategy, &second);
    if parsed.is_none() {
        log::warn!("{side}: unparseable verdict after reprompt: {second:?}");
    }
    Ok(VerdictRecord {
        raw,
        reprompt_raw: Some(second.clone()),
        verdict: parsed.map(|p| p.0),
        confidence: parsed.and_then(|p| p.1),
        status: if parsed.is_some() {
            ParseStatus::RepromptedOk
        } else {
            ParseStatus::Failed
        },
    })
}

/// Checks both statements of a pair: one call per side, plus at most one
/// strict reprompt per side.
pub fn factcheck(
    pair: &NewsPair,
    strategy: Strategy,
    cutoff: Option<&Cutoff>,
    gateway: &Gateway,
    model: &str,
    cfg: &GenerationConfig,
) -> Result<FactcheckOutcome, StrategyError> {
    if !strategy.supports(Task::FactCheck) {
        return Err(StrategyError::Unsupported(strategy));
    }
    let p_true = factcheck_prompt(strategy, cutoff, &pair.true_text)?;
    let p_false = factcheck_prompt(strategy, cutoff, &pair.falsified_text)?;
    Ok(FactcheckOutcome {
        pair_id: pair.pair_id.clone(),
        strategy,
        true_side: check_side(gateway, model, strategy, &p_true, cfg, &format!("pair {} true side", pair.pair_id))?,
        falsified_side: check_side(
            gateway,
            model,
            strategy,
            &p_false,
            cfg,
            &format!("pair {} falsified side", pair.pair_id),
        )?,
    })
}
