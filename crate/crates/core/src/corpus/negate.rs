use std::collections::HashMap;
use std::sync::OnceLock;

use thiserror::Error;

use crate::gateway::{Gateway, GenerationConfig};
use crate::text::whitespace_spans;

#[derive(Debug, Error)]
pub enum NegateError {
    #[error("negation engine failed: {0}")]
    Engine(String),
    #[error("no negatable clause found")]
    NoNegatableClause,
}

/// Produces the counterfactual (negated) form of a news description.
pub trait Negator: Send + Sync {
    fn negate(&self, text: &str) -> Result<String, NegateError>;
}

pub fn negate(text: &str, engine: &dyn Negator) -> Result<String, NegateError> {
    let out = engine.negate(text)?;
    if out.trim().is_empty() || out == text {
        return Err(NegateError::NoNegatableClause);
    }
    Ok(out)
}

/// Deterministic fallback negator. Finds the first finite verb and negates
/// it: auxiliaries and copulas take a following "not" ("is" -> "is not"),
/// past-tense verbs become "did not <base>", and third-person present verbs
/// become "does not <base>". An auxiliary already followed by "not" loses
/// the "not".
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleNegator;

const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "am", "has", "have", "had", "will", "would", "can", "could",
    "shall", "should", "may", "might", "must", "does", "do", "did",
];

const NON_VERB_S: &[&str] = &[
    "news", "this", "its", "his", "hers", "ours", "yours", "theirs", "always", "perhaps",
    "series", "species", "less", "across", "towards", "afterwards", "us", "was", "is", "has",
    "does", "as", "plus", "bus", "status", "census", "campus", "thus", "sometimes", "whereas",
];

const NON_VERB_ED: &[&str] = &[
    "need", "red", "bed", "seed", "speed", "feed", "shed", "breed", "creed", "greed", "hundred",
    "sacred", "naked", "wicked", "embed", "led", "fled", "bred", "sled", "wed", "steed", "weed",
];

/// Words after which a trailing "-s" word is more likely a plural noun.
const NOUN_CONTEXT: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "its", "his", "her", "their", "our",
    "my", "your", "of", "in", "on", "for", "with", "by", "to", "from", "at", "new", "many",
    "several", "some", "all", "two", "three", "four", "five", "more", "most", "few", "other",
    "and", "or", "into", "over", "under", "about", "after", "before", "during",
];

fn irregular_past() -> &'static HashMap<&'static str, &'static str> {
    static TABLE: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    TABLE.get_or_init(|| {
        [
            ("won", "win"), ("took", "take"), ("made", "make"), ("said", "say"), ("went", "go"),
            ("came", "come"), ("became", "become"), ("gave", "give"), ("held", "hold"),
            ("left", "leave"), ("met", "meet"), ("ran", "run"), ("sold", "sell"), ("told", "tell"),
            ("wrote", "write"), ("began", "begin"), ("brought", "bring"), ("bought", "buy"),
            ("built", "build"), ("chose", "choose"), ("drew", "draw"), ("fell", "fall"),
            ("fought", "fight"), ("found", "find"), ("got", "get"), ("grew", "grow"),
            ("kept", "keep"), ("knew", "know"), ("lost", "lose"), ("paid", "pay"),
            ("rose", "rise"), ("sent", "send"), ("shot", "shoot"), ("spoke", "speak"),
            ("spent", "spend"), ("stood", "stand"), ("struck", "strike"), ("swore", "swear"),
            ("threw", "throw"), ("understood", "understand"), ("withdrew", "withdraw"),
            ("broke", "break"), ("caught", "catch"), ("flew", "fly"), ("forgot", "forget"),
            ("hid", "hide"), ("saw", "see"), ("sought", "seek"), ("taught", "teach"),
            ("thought", "think"), ("felt", "feel"), ("overtook", "overtake"),
            ("undertook", "undertake"), ("upheld", "uphold"), ("wore", "wear"), ("woke", "wake"),
            ("ate", "eat"), ("drove", "drive"), ("forgave", "forgive"), ("froze", "freeze"),
            ("hung", "hang"), ("lay", "lie"), ("lent", "lend"), ("rang", "ring"), ("rode", "ride"),
            ("sang", "sing"), ("sank", "sink"), ("slept", "sleep"), ("stole", "steal"),
            ("swept", "sweep"), ("swam", "swim"), ("tore", "tear"), ("overcame", "overcome"),
            ("overthrew", "overthrow"), ("foresaw", "foresee"), ("oversaw", "oversee"),
            ("mistook", "mistake"), ("dealt", "deal"), ("meant", "mean"), ("heard", "hear"),
            ("fed", "feed"), ("fled", "flee"), ("led", "lead"), ("bred", "breed"), ("bled", "bleed"),
            ("sped", "speed"), ("shook", "shake"), ("forbade", "forbid"), ("bit", "bite"),
            ("blew", "blow"), ("dug", "dig"), ("spun", "spin"), ("stuck", "stick"),
            ("strove", "strive"), ("wept", "weep"), ("won", "win"), ("arose", "arise"),
        ]
        .into_iter()
        .collect()
    })
}

/// Regular "-ed" past form back to its base ("approved" -> "approve").
fn regular_base(word: &str) -> String {
    if word.len() > 4 && word.ends_with("ied") {
        return format!("{}y", &word[..word.len() - 3]);
    }
    if word.ends_with("eed") {
        return word[..word.len() - 1].to_string();
    }
    let stem = &word[..word.len() - 2];
    let chars: Vec<char> = stem.chars().collect();
    let n = chars.len();
    let is_vowel = |c: char| "aeiou".contains(c);
    if n >= 3 && chars[n - 1] == chars[n - 2] && !is_vowel(chars[n - 1]) && !"lszfd".contains(chars[n - 1]) {
        return chars[..n - 1].iter().collect();
    }
    if needs_final_e(&chars) {
        return format!("{stem}e");
    }
    stem.to_string()
}

fn needs_final_e(c: &[char]) -> bool {
    const TAKES_E: &[&str] = &["cit", "invit", "unit", "excit", "ignit", "recit", "delet", "complet", "compet", "unite"];
    const KEEPS: &[&str] = &["focus", "bias", "gas", "abandon", "summon", "reckon", "develop"];
    let s: String = c.iter().collect();
    if TAKES_E.contains(&s.as_str()) {
        return true;
    }
    if KEEPS.contains(&s.as_str()) {
        return false;
    }
    let n = c.len();
    if n < 2 {
        return false;
    }
    let is_vowel = |ch: char| "aeiou".contains(ch);
    let last = c[n - 1];
    let prev = c[n - 2];
    let before = if n >= 3 { Some(c[n - 3]) } else { None };
    let cvc_with = |vowels: &str| {
        vowels.contains(prev) && before.is_some_and(|b| !is_vowel(b))
    };
    match last {
        'v' | 'c' | 'u' => true,
        'z' => prev != 'z',
        'l' => "bcdfgkptz".contains(prev),
        'g' => matches!(prev, 'r' | 'd' | 'l') || (prev == 'n' && before.is_some_and(|b| "aeu".contains(b))),
        's' => is_vowel(prev) || matches!(prev, 'r' | 'n' | 'p'),
        't' => cvc_with("aou"),
        'r' => cvc_with("aoui"),
        'm' | 'n' => cvc_with("aiu"),
        'd' | 'k' => cvc_with("aiou"),
        _ => false,
    }
}

/// Third-person present back to its base ("announces" -> "announce").
fn present_base(word: &str) -> String {
    if word.len() > 4 && word.ends_with("ies") {
        return format!("{}y", &word[..word.len() - 3]);
    }
    for suffix in ["sses", "ches", "shes", "xes", "zes", "oes"] {
        if word.ends_with(suffix) {
            return word[..word.len() - 2].to_string();
        }
    }
    word[..word.len() - 1].to_string()
}

enum Edit {
    InsertNot,
    RemoveFollowingNot,
    Replace(String),
}

impl RuleNegator {
    fn find_edit(words: &[(String, String, String)]) -> Option<(usize, Edit)> {
        for (i, (_, core, _)) in words.iter().enumerate() {
            let lower = core.to_lowercase();
            if AUXILIARIES.contains(&lower.as_str()) {
                let next_is_not = words
                    .get(i + 1)
                    .is_some_and(|(_, c, _)| c.eq_ignore_ascii_case("not"));
                return Some((i, if next_is_not { Edit::RemoveFollowingNot } else { Edit::InsertNot }));
            }
            if i == 0 || core.is_empty() || !core.chars().all(|c| c.is_ascii_alphabetic()) {
                continue;
            }
            if core.chars().next().is_some_and(|c| c.is_uppercase()) {
                continue;
            }
            if let Some(base) = irregular_past().get(lower.as_str()) {
                return Some((i, Edit::Replace(format!("did not {base}"))));
            }
            if lower.len() >= 4 && lower.ends_with("ed") && !NON_VERB_ED.contains(&lower.as_str()) {
                return Some((i, Edit::Replace(format!("did not {}", regular_base(&lower)))));
            }
            let prev = words[i - 1].1.to_lowercase();
            if lower.len() >= 3
                && lower.ends_with('s')
                && !lower.ends_with("ss")
                && !lower.ends_with("us")
                && !lower.ends_with("is")
                && !NON_VERB_S.contains(&lower.as_str())
                && !NOUN_CONTEXT.contains(&prev.as_str())
                && !prev.ends_with('s')
            {
                return Some((i, Edit::Replace(format!("does not {}", present_base(&lower)))));
            }
        }
        None
    }
}

impl Negator for RuleNegator {
    fn negate(&self, text: &str) -> Result<String, NegateError> {
        let spans = whitespace_spans(text);
        let words: Vec<(String, String, String)> = spans
            .iter()
            .map(|r| {
                let w = &text[r.clone()];
                let start = w.find(|c: char| c.is_alphanumeric()).unwrap_or(w.len());
                let end = w
                    .rfind(|c: char| c.is_alphanumeric())
                    .map(|e| e + w[e..].chars().next().map_or(1, char::len_utf8))
                    .unwrap_or(start);
                (w[..start].to_string(), w[start..end.max(start)].to_string(), w[end.max(start)..].to_string())
            })
            .collect();
        let (idx, edit) = Self::find_edit(&words).ok_or(NegateError::NoNegatableClause)?;
        let span = spans[idx].clone();
        let (pre, core, post) = &words[idx];
        let mut out = String::with_capacity(text.len() + 8);
        match edit {
            Edit::InsertNot => {
                out.push_str(&text[..span.start]);
                out.push_str(&format!("{pre}{core} not{post}"));
                out.push_str(&text[span.end..]);
            }
            Edit::RemoveFollowingNot => {
                let not_span = spans[idx + 1].clone();
                out.push_str(&text[..span.end]);
                let (_, _, not_post) = &words[idx + 1];
                out.push_str(not_post);
                out.push_str(&text[not_span.end..]);
            }
            Edit::Replace(phrase) => {
                out.push_str(&text[..span.start]);
                out.push_str(&format!("{pre}{phrase}{post}"));
                out.push_str(&text[span.end..]);
            }
        }
        Ok(out)
    }
}

/// Negation through a completion model.
pub struct ModelNegator<'a> {
    pub gateway: &'a Gateway,
    pub model: String,
}

pub const NEGATION_PROMPT: &str = "Rewrite the following news description so that it states the opposite of what it reports (the event did not happen). Change as few words as possible and respond with the rewritten description only.\n\nDescription: {text}\nRewritten:";

impl Negator for ModelNegator<'_> {
    fn negate(&self, text: &str) -> Result<String, NegateError> {
        let prompt = NEGATION_PROMPT.replace("{text}", text);
        let out = self
            .gateway
            .complete(&self.model, &prompt, &GenerationConfig::default())
            .map_err(|e| NegateError::Engine(e.to_string()))?;
        Ok(out.trim().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn neg(s: &str) -> String {
        negate(s, &RuleNegator).unwrap()
    }

    #[test]
    fn documented_examples() {
        assert_eq!(neg("The senate passed the bill."), "The senate did not pass the bill.");
        assert_eq!(neg("X won the election."), "X did not win the election.");
    }

    #[test]
    fn auxiliaries_and_copulas() {
        assert_eq!(neg("The vaccine is available."), "The vaccine is not available.");
        assert_eq!(neg("Officials will attend the summit."), "Officials will not attend the summit.");
        assert_eq!(neg("The court did not rule."), "The court did rule.");
    }

    #[test]
    fn regular_past_bases() {
        for (word, base) in [
            ("approved", "approve"), ("stopped", "stop"), ("carried", "carry"), ("agreed", "agree"),
            ("announced", "announce"), ("rejected", "reject"), ("voted", "vote"), ("raised", "raise"),
            ("changed", "change"), ("signed", "sign"), ("killed", "kill"), ("settled", "settle"),
            ("declared", "declare"), ("ordered", "order"), ("named", "name"), ("opened", "open"),
            ("trained", "train"), ("decided", "decide"), ("added", "add"), ("visited", "visit"),
            ("defeated", "defeat"), ("invited", "invite"), ("merged", "merge"), ("reversed", "reverse"),
        ] {
            assert_eq!(regular_base(word), base, "{word}");
        }
    }

    #[test]
    fn present_tense() {
        assert_eq!(neg("Apple announces a new phone."), "Apple does not announce a new phone.");
        assert_eq!(neg("The company plans layoffs."), "The company does not plan layoffs.");
    }

    #[test]
    fn no_clause() {
        assert!(matches!(
            negate("Breaking: fire downtown", &RuleNegator),
            Err(NegateError::NoNegatableClause)
        ));
    }

    #[test]
    fn deterministic() {
        let s = "Lawmakers approved the budget on Friday.";
        assert_eq!(neg(s), neg(s));
        assert_ne!(neg(s), s);
    }
}
