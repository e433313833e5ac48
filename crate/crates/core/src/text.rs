//! Toy text conditioning: a fixed 64-word vocabulary and a lowercase
//! whitespace tokenizer.

use std::collections::HashMap;
use std::sync::OnceLock;

/// Token for any word outside the vocabulary.
pub const UNKNOWN_TOKEN: usize = 0;
/// Token standing in for the null (dropped) text condition.
pub const NULL_TOKEN: usize = 1;
/// Longest token sequence kept; longer instructions are truncated.
pub const MAX_TOKENS: usize = 16;

static VOCAB_SRC: &str = include_str!("../data/vocab.txt");

pub fn vocabulary() -> &'static [&'static str] {
    static WORDS: OnceLock<Vec<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| VOCAB_SRC.lines().map(str::trim).filter(|l| !l.is_empty()).collect())
}

pub fn vocab_size() -> usize {
    vocabulary().len()
}

fn index() -> &'static HashMap<&'static str, usize> {
    static INDEX: OnceLock<HashMap<&'static str, usize>> = OnceLock::new();
    INDEX.get_or_init(|| vocabulary().iter().enumerate().map(|(i, w)| (*w, i)).collect())
}

/// Lowercased words with surrounding punctuation stripped.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Token ids, unknown words mapped to [`UNKNOWN_TOKEN`], truncated to
/// [`MAX_TOKENS`].
pub fn tokenize(text: &str) -> Vec<usize> {
    let idx = index();
    words(text)
        .iter()
        .take(MAX_TOKENS)
        .map(|w| idx.get(w.as_str()).copied().unwrap_or(UNKNOWN_TOKEN))
        .collect()
}
