//! Mitigation strategies: prompt variants, chunked and re-ordered
//! summarization, decoding-time processors, and fact-check protocols.

mod factcheck;
mod summarize;
pub mod template;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use factcheck::{
    factcheck, factcheck_prompt, parse_confidence, parse_verdict, FactcheckOutcome, FailedVerdicts, ParseStatus,
    VerdictRecord,
};
pub use summarize::{
    budget_allocation, ensemble_chunks, DraftSimilarity, SalienceProvider, Stage, StrategyError, SummaryOutput, Summarizer,
    SummarizerOptions,
};
pub use template::{extract_final_summary, render, template, Bindings, PromptTemplate, TemplateError};

use crate::decoding::ProcessorSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Baseline,
    // prompt family
    SelfAwareness,
    ChainOfThought,
    Cloze,
    CognitiveCounterfactual,
    SelfHelpDebias,
    CotCalibration,
    KnowledgeBoundary,
    EpistemicTagging,
    // chunk family
    PartialSummariesEnsemble,
    WeightedSummaries,
    // re-rank family
    AttentionSort,
    PositionInvariantShuffle,
    // decode family
    ForcedBalancedCoverage,
    WeightedTokenDecoding,
    Mirostat,
    RejectionSampling,
    SelfDebias,
    ExplanationGuard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Summarization,
    FactCheck,
}

impl Strategy {
    pub const ALL: [Strategy; 19] = [
        Strategy::Baseline,
        Strategy::SelfAwareness,
        Strategy::ChainOfThought,
        Strategy::Cloze,
        Strategy::CognitiveCounterfactual,
        Strategy::SelfHelpDebias,
        Strategy::CotCalibration,
        Strategy::KnowledgeBoundary,
        Strategy::EpistemicTagging,
        Strategy::PartialSummariesEnsemble,
        Strategy::WeightedSummaries,
        Strategy::AttentionSort,
        Strategy::PositionInvariantShuffle,
        Strategy::ForcedBalancedCoverage,
        Strategy::WeightedTokenDecoding,
        Strategy::Mirostat,
        Strategy::RejectionSampling,
        Strategy::SelfDebias,
        Strategy::ExplanationGuard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::SelfAwareness => "self_awareness",
            Strategy::ChainOfThought => "chain_of_thought",
            Strategy::Cloze => "cloze",
            Strategy::CognitiveCounterfactual => "cognitive_counterfactual",
            Strategy::SelfHelpDebias => "self_help_debias",
            Strategy::CotCalibration => "cot_calibration",
            Strategy::KnowledgeBoundary => "knowledge_boundary",
            Strategy::EpistemicTagging => "epistemic_tagging",
            Strategy::PartialSummariesEnsemble => "partial_summaries_ensemble",
            Strategy::WeightedSummaries => "weighted_summaries",
            Strategy::AttentionSort => "attention_sort",
            Strategy::PositionInvariantShuffle => "position_invariant_shuffle",
            Strategy::ForcedBalancedCoverage => "forced_balanced_coverage",
            Strategy::WeightedTokenDecoding => "weighted_token_decoding",
            Strategy::Mirostat => "mirostat",
            Strategy::RejectionSampling => "rejection_sampling",
            Strategy::SelfDebias => "self_debias",
            Strategy::ExplanationGuard => "explanation_guard",
        }
    }

    pub fn supports(self, task: Task) -> bool {
        match self {
            Strategy::Baseline => true,
            Strategy::CotCalibration | Strategy::KnowledgeBoundary | Strategy::EpistemicTagging => {
                task == Task::FactCheck
            }
            _ => task == Task::Summarization,
        }
    }

    /// Default processor for the decode family.
    pub fn processor(self) -> Option<ProcessorSpec> {
        match self {
            Strategy::ForcedBalancedCoverage => Some(ProcessorSpec::forced_coverage()),
            Strategy::WeightedTokenDecoding => Some(ProcessorSpec::weighted_token()),
            Strategy::Mirostat => Some(ProcessorSpec::mirostat()),
            Strategy::RejectionSampling => Some(ProcessorSpec::rejection_sampling()),
            Strategy::SelfDebias => Some(ProcessorSpec::self_debias()),
            Strategy::ExplanationGuard => Some(ProcessorSpec::explanation_guard()),
            _ => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().replace('-', "_");
        Strategy::ALL.into_iter().find(|x| x.name() == key).ok_or_else(|| {
            let names: Vec<&str> = Strategy::ALL.iter().map(|x| x.name()).collect();
            format!("unknown strategy {s:?}; expected one of {}", names.join(", "))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eighteen_mitigations_plus_baseline() {
        let mitigations = Strategy::ALL.iter().filter(|s| **s != Strategy::Baseline).count();
        assert_eq!(mitigations, 18);
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert!(s.supports(Task::Summarization) || s.supports(Task::FactCheck));
        }
        assert_eq!("self-debias".parse::<Strategy>().unwrap(), Strategy::SelfDebias);
        assert!("nonsense".parse::<Strategy>().is_err());
        assert_eq!(Strategy::ALL.iter().filter(|s| s.processor().is_some()).count(), 6);
    }
}
