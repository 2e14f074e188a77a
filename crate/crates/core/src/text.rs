//! Word-level helpers shared by the filters and the metrics.
//!
//! A word is a maximal run of non-whitespace characters. Stop-word lookups
//! lowercase the word and trim non-alphanumeric characters from both ends,
//! so `"The,"` counts as the stop word `the`.

use std::collections::HashSet;
use std::sync::LazyLock;

const STOPWORDS_EN: &str = include_str!("../data/stopwords_en.txt");

static ENGLISH: LazyLock<StopWords> = LazyLock::new(|| StopWords::parse(STOPWORDS_EN));

/// A frozen stop-word list.
#[derive(Debug, Clone)]
pub struct StopWords {
    words: HashSet<String>,
}

impl StopWords {
    /// The bundled 150-entry English list.
    pub fn english() -> &'static StopWords {
        &ENGLISH
    }

    /// One word per line; blank lines and `#` comments are ignored.
    pub fn parse(list: &str) -> Self {
        let words = list
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        let key = stop_key(word);
        !key.is_empty() && self.words.contains(&key)
    }
}

/// Lowercased word with surrounding punctuation removed.
pub fn stop_key(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Collapses every whitespace run to a single space and trims the ends.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for w in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

/// Fraction of non-whitespace characters that are ASCII or Unicode digits.
/// Returns 0 for text without non-whitespace characters.
pub fn digit_fraction(text: &str) -> f64 {
    let mut total = 0usize;
    let mut digits = 0usize;
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        total += 1;
        if c.is_numeric() {
            digits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        digits as f64 / total as f64
    }
}

/// Occurrences of `#`, `…` and non-overlapping `...`.
pub fn symbol_count(text: &str) -> usize {
    let hashes = text.chars().filter(|c| *c == '#' || *c == '\u{2026}').count();
    hashes + text.matches("...").count()
}
