//! Small text utilities shared across modules: token counting, whitespace
//! spans, and the lowercase/punctuation-stripped term normalization used by
//! TF-IDF, the hashing embedder and the decoding processors.

use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;

/// Counts tokens for the corpus length filter.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Default counter: every run of word characters is one token and every
/// other non-whitespace character is its own token.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunctTokenizer;

impl Tokenizer for WordPunctTokenizer {
    fn count(&self, text: &str) -> usize {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| Regex::new(r"\w+|[^\w\s]").expect("static regex"));
        re.find_iter(text).count()
    }
}

/// Byte ranges of the whitespace-separated tokens of `text`.
pub fn whitespace_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push(s..i);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push(s..text.len());
    }
    spans
}

/// Lowercased alphanumeric terms; everything else is a separator.
pub fn terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Normalized form of a single decoded token (" Bad," -> "bad").
/// Returns `None` when nothing alphanumeric remains.
pub fn normalize_token(token: &str) -> Option<String> {
    let t: String = token
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    if t.is_empty() {
        None
    } else {
        Some(t)
    }
}

/// Splits on periods, keeping the period with its sentence. A trailing
/// fragment without a period counts as a sentence.
pub fn period_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        cur.push(c);
        if c == '.' {
            let s = cur.trim();
            if !s.is_empty() && s != "." {
                out.push(s.to_string());
            }
            cur.clear();
        }
    }
    let s = cur.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

/// Paragraphs separated by one or more blank lines.
pub fn paragraphs(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\n[ \t]*\n\s*").expect("static regex"));
    re.split(text)
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_punct_counts() {
        assert_eq!(WordPunctTokenizer.count("Hello, world!"), 4);
        assert_eq!(WordPunctTokenizer.count(""), 0);
        assert_eq!(WordPunctTokenizer.count("it's 8GB"), 4);
    }

    #[test]
    fn spans_cover_tokens() {
        let t = "  a bb\tccc\n";
        let spans = whitespace_spans(t);
        let toks: Vec<_> = spans.iter().map(|r| &t[r.clone()]).collect();
        assert_eq!(toks, ["a", "bb", "ccc"]);
    }

    #[test]
    fn terms_strip_punctuation() {
        assert_eq!(terms("The TV's screen -- great!"), ["the", "tv", "s", "screen", "great"]);
        assert_eq!(normalize_token(" Bad,"), Some("bad".into()));
        assert_eq!(normalize_token(" ..."), None);
    }

    #[test]
    fn sentences_keep_periods() {
        assert_eq!(period_sentences("A. B. C."), ["A.", "B.", "C."]);
        assert_eq!(period_sentences("One. Two"), ["One.", "Two"]);
        assert!(period_sentences("  ").is_empty());
    }

    #[test]
    fn paragraph_split() {
        let p = paragraphs("first\npara\n\nsecond\n   \nthird");
        assert_eq!(p, ["first\npara", "second", "third"]);
    }
}
