//! Prompt templates and their rendering.
//!
//! Placeholders are `[UPPER_SNAKE]` and `{knowledge_cutoff}`. A run of
//! lines `... [X_1 ...]`, `... [X_2 ...]`, `...` is a list block and
//! expands to one line per item of the list binding `X`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::{Captures, Regex};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("unknown template {0:?}")]
    Unknown(String),
    #[error("template {template}: placeholder {placeholder} is unbound")]
    Unbound { template: String, placeholder: String },
    #[error("template {template}: list {list} needs at least one item")]
    EmptyList { template: String, list: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: &'static str,
    pub text: &'static str,
    /// Marker preceding the answer in the model output, if any.
    pub marker: Option<&'static str>,
}

pub const FINAL_SUMMARY: &str = "FINAL_SUMMARY:";

macro_rules! template {
    ($name:literal, $marker:expr) => {
        PromptTemplate {
            name: $name,
            text: include_str!(concat!("../../assets/templates/", $name, ".txt")),
            marker: $marker,
        }
    };
}

pub static TEMPLATES: &[PromptTemplate] = &[
    template!("baseline_summarize", Some(FINAL_SUMMARY)),
    template!("self_awareness", Some(FINAL_SUMMARY)),
    template!("chain_of_thought", Some(FINAL_SUMMARY)),
    template!("cloze", Some(FINAL_SUMMARY)),
    template!("cognitive_counterfactual", Some(FINAL_SUMMARY)),
    template!("cognitive_counterfactual_deviations", Some("DEVIATIONS:")),
    template!("self_help_debias", Some(FINAL_SUMMARY)),
    template!("partial_summaries_merge", Some(FINAL_SUMMARY)),
    template!("weighted_summaries_chunk", Some(FINAL_SUMMARY)),
    template!("attention_sort", Some(FINAL_SUMMARY)),
    template!("position_invariant_shuffle", Some(FINAL_SUMMARY)),
    template!("factcheck_baseline", None),
    template!("cot_calibration", None),
    template!("knowledge_boundary", None),
    template!("epistemic_tagging", None),
    template!("factcheck_strict", None),
    template!("epistemic_strict", None),
];

pub fn template(name: &str) -> Result<&'static PromptTemplate, TemplateError> {
    TEMPLATES
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| TemplateError::Unknown(name.to_string()))
}

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[([A-Z][A-Z0-9_]*)\]|\{(knowledge_cutoff)\}").unwrap());
static LIST_ITEM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[([A-Z][A-Z_]*?)_([12])((?:_[A-Z]+)?)\]").unwrap());
static ORDINAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b1\b").unwrap());

/// Replaces free-standing `1`s (e.g. "Segment 1:") with the item number.
fn renumber(s: &str, k: usize) -> String {
    ORDINAL.replace_all(s, k.to_string().as_str()).into_owned()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Binding {
    Text(String),
    List(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bindings(BTreeMap<String, Binding>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(mut self, key: &str, value: impl Into<String>) -> Self {
        self.0.insert(key.to_string(), Binding::Text(value.into()));
        self
    }

    pub fn list(mut self, key: &str, items: Vec<String>) -> Self {
        self.0.insert(key.to_string(), Binding::List(items));
        self
    }

    fn get_text(&self, key: &str) -> Option<&str> {
        match self.0.get(key) {
            Some(Binding::Text(s)) => Some(s),
            _ => None,
        }
    }
}

/// A list block found in a template: the line pattern with its index slot.
struct ListBlock {
    first_line: usize,
    list: String,
    prefix: String,
    suffix: String,
}

fn list_blocks(lines: &[&str]) -> Vec<ListBlock> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + 2 < lines.len() {
        if let Some(c) = LIST_ITEM.captures(lines[i]).filter(|c| &c[2] == "1") {
            let second = renumber(lines[i], 2).replacen(
                &format!("{}_1{}]", &c[1], &c[3]),
                &format!("{}_2{}]", &c[1], &c[3]),
                1,
            );
            if lines[i + 1] == second && lines[i + 2].trim() == "..." {
                let m = c.get(0).unwrap();
                out.push(ListBlock {
                    first_line: i,
                    list: c[1].to_string(),
                    prefix: lines[i][..m.start()].to_string(),
                    suffix: lines[i][m.end()..].to_string(),
                });
                i += 3;
                continue;
            }
        }
        i += 1;
    }
    out
}

impl PromptTemplate {
    /// Scalar placeholders, plus list names for list blocks.
    pub fn placeholders(&self) -> BTreeSet<String> {
        let lines: Vec<&str> = self.text.split('\n').collect();
        let blocks = list_blocks(&lines);
        let mut out = BTreeSet::new();
        for (i, line) in lines.iter().enumerate() {
            if let Some(b) = blocks.iter().find(|b| (b.first_line..b.first_line + 3).contains(&i)) {
                out.insert(b.list.clone());
                continue;
            }
            for c in PLACEHOLDER.captures_iter(line) {
                out.insert(c.get(1).or(c.get(2)).unwrap().as_str().to_string());
            }
        }
        out
    }

    /// Substitutes in a single pass, so bound values are never rescanned.
    pub fn render(&self, bindings: &Bindings) -> Result<String, TemplateError> {
        let lines: Vec<&str> = self.text.split('\n').collect();
        let blocks = list_blocks(&lines);
        let mut out: Vec<String> = Vec::with_capacity(lines.len());
        let mut i = 0;
        while i < lines.len() {
            if let Some(b) = blocks.iter().find(|b| b.first_line == i) {
                let items = match bindings.0.get(&b.list) {
                    Some(Binding::List(items)) => items,
                    _ => {
                        return Err(TemplateError::Unbound {
                            template: self.name.into(),
                            placeholder: b.list.clone(),
                        })
                    }
                };
                if items.is_empty() {
                    return Err(TemplateError::EmptyList {
                        template: self.name.into(),
                        list: b.list.clone(),
                    });
                }
                for (k, item) in items.iter().enumerate() {
                    out.push(format!("{}{}{}", renumber(&b.prefix, k + 1), item, renumber(&b.suffix, k + 1)));
                }
                i += 3;
                continue;
            }
            let mut missing = None;
            let line = PLACEHOLDER.replace_all(lines[i], |c: &Captures| {
                let key = c.get(1).or(c.get(2)).unwrap().as_str();
                match bindings.get_text(key) {
                    Some(v) => v.to_string(),
                    None => {
                        missing.get_or_insert_with(|| key.to_string());
                        String::new()
                    }
                }
            });
            if let Some(placeholder) = missing {
                return Err(TemplateError::Unbound {
                    template: self.name.into(),
                    placeholder,
                });
            }
            out.push(line.into_owned());
            i += 1;
        }
        Ok(out.join("\n"))
    }
}

pub fn render(name: &str, bindings: &Bindings) -> Result<String, TemplateError> {
    template(name)?.render(bindings)
}

/// Text after the last occurrence of `marker`, trimmed; the whole output
/// (trimmed) when the marker is absent.
pub fn extract_after_marker(output: &str, marker: &str) -> String {
    match output.rfind(marker) {
        Some(i) => output[i + marker.len()..].trim().to_string(),
        None => output.trim().to_string(),
    }
}

pub fn extract_final_summary(output: &str) -> String {
    extract_after_marker(output, FINAL_SUMMARY)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholders_found() {
        let p = template("attention_sort").unwrap().placeholders();
        assert_eq!(p.into_iter().collect::<Vec<_>>(), ["SORTED_SEGMENT"]);
        let p = template("cognitive_counterfactual").unwrap().placeholders();
        assert_eq!(
            p.into_iter().collect::<Vec<_>>(),
            ["DOCUMENT_TEXT", "DRAFT_SUMMARY", "LIST_OF_SIMULATED_BIAS_DEVIATIONS"]
        );
        assert!(template("epistemic_tagging").unwrap().placeholders().is_empty());
        assert!(template("chain_of_thought").unwrap().placeholders().contains("DOCUMENT_TEXT"));
        assert_eq!(
            template("knowledge_boundary").unwrap().placeholders().into_iter().collect::<Vec<_>>(),
            ["knowledge_cutoff"]
        );
    }

    #[test]
    fn list_blocks_expand() {
        let b = Bindings::new().list("PARTIAL_SUMMARY", vec!["A.".into(), "B.".into(), "C.".into()]);
        assert_eq!(
            render("partial_summaries_merge", &b).unwrap(),
            "Combine the following partial summaries into one coherent summary:\nA.\nB.\nC.\nFINAL_SUMMARY:"
        );
        let b = Bindings::new().list("SORTED_SEGMENT", vec!["x".into()]);
        assert_eq!(
            render("attention_sort", &b).unwrap(),
            "CONTEXT:\nSegment 1: x\nTASK: Summarize:\nFINAL_SUMMARY:"
        );
    }

    #[test]
    fn segment_numbers_follow_list_position() {
        let b = Bindings::new().list("SORTED_SEGMENT", vec!["x".into(), "y".into(), "z".into()]);
        let out = render("attention_sort", &b).unwrap();
        assert_eq!(out, "CONTEXT:\nSegment 1: x\nSegment 2: y\nSegment 3: z\nTASK: Summarize:\nFINAL_SUMMARY:");
    }

    #[test]
    fn unbound_and_unknown() {
        assert_eq!(
            render("self_awareness", &Bindings::new()),
            Err(TemplateError::Unbound {
                template: "self_awareness".into(),
                placeholder: "DOCUMENT_TEXT".into()
            })
        );
        assert!(matches!(render("nope", &Bindings::new()), Err(TemplateError::Unknown(_))));
        assert!(matches!(
            render("partial_summaries_merge", &Bindings::new().list("PARTIAL_SUMMARY", vec![])),
            Err(TemplateError::EmptyList { .. })
        ));
    }

    #[test]
    fn values_are_not_rescanned() {
        let out = render("baseline_summarize", &Bindings::new().text("DOCUMENT_TEXT", "see [DRAFT_SUMMARY]")).unwrap();
        assert_eq!(out, "Please summarize the following text: see [DRAFT_SUMMARY]\nFINAL_SUMMARY:");
    }

    #[test]
    fn marker_extraction() {
        assert_eq!(extract_final_summary("BEGIN: x\nFINAL_SUMMARY: first\nFINAL_SUMMARY:  last  "), "last");
        assert_eq!(extract_final_summary("  plain "), "plain");
    }
}
