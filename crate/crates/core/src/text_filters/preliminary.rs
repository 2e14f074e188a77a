//! Cheap document-level heuristics run right after extraction.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Decision, FilterVerdict};
use crate::stream_format::{to_text_corpus, StreamDocument};
use crate::text::{digit_fraction, symbol_count, StopWords};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreliminaryCheck {
    EmptyText,
    LoremIpsum,
    TooShort,
    TooLong,
    MeanWordLength,
    SymbolRatio,
    FewStopWords,
    LineBreaks,
    WordRepetition,
    ExcessiveDigits,
}

impl PreliminaryCheck {
    /// Evaluation order; the first firing check is the drop reason.
    pub const ORDER: [PreliminaryCheck; 10] = [
        PreliminaryCheck::EmptyText,
        PreliminaryCheck::LoremIpsum,
        PreliminaryCheck::TooShort,
        PreliminaryCheck::TooLong,
        PreliminaryCheck::MeanWordLength,
        PreliminaryCheck::SymbolRatio,
        PreliminaryCheck::FewStopWords,
        PreliminaryCheck::LineBreaks,
        PreliminaryCheck::WordRepetition,
        PreliminaryCheck::ExcessiveDigits,
    ];

    pub fn code(self) -> &'static str {
        match self {
            PreliminaryCheck::EmptyText => "empty_text",
            PreliminaryCheck::LoremIpsum => "lorem_ipsum",
            PreliminaryCheck::TooShort => "too_short",
            PreliminaryCheck::TooLong => "too_long",
            PreliminaryCheck::MeanWordLength => "mean_word_length",
            PreliminaryCheck::SymbolRatio => "symbol_ratio",
            PreliminaryCheck::FewStopWords => "few_stop_words",
            PreliminaryCheck::LineBreaks => "line_breaks",
            PreliminaryCheck::WordRepetition => "word_repetition",
            PreliminaryCheck::ExcessiveDigits => "excessive_digits",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreliminaryConfig {
    pub min_words: usize,
    pub max_words: usize,
    pub min_mean_word_length: f64,
    pub max_mean_word_length: f64,
    pub max_symbol_ratio: f64,
    pub min_distinct_stop_words: usize,
    /// More consecutive blank lines than this drops the document.
    pub max_blank_lines: usize,
    pub max_top_word_fraction: f64,
    pub max_digit_fraction: f64,
    pub disabled: Vec<PreliminaryCheck>,
}

impl Default for PreliminaryConfig {
    fn default() -> Self {
        Self {
            min_words: 50,
            max_words: 100_000,
            min_mean_word_length: 3.0,
            max_mean_word_length: 10.0,
            max_symbol_ratio: 0.1,
            min_distinct_stop_words: 2,
            max_blank_lines: 3,
            max_top_word_fraction: 0.2,
            max_digit_fraction: 0.5,
            disabled: Vec::new(),
        }
    }
}

impl PreliminaryConfig {
    pub fn validate(&self) -> Result<(), String> {
        let fraction = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("preliminary.{name} must be in [0, 1], got {v}"))
            }
        };
        fraction("max_top_word_fraction", self.max_top_word_fraction)?;
        fraction("max_digit_fraction", self.max_digit_fraction)?;
        if self.min_words > self.max_words {
            return Err("preliminary.min_words exceeds max_words".into());
        }
        if !(self.min_mean_word_length <= self.max_mean_word_length) {
            return Err("preliminary mean word length bounds are inverted".into());
        }
        if !(self.max_symbol_ratio >= 0.0) {
            return Err("preliminary.max_symbol_ratio must be non-negative".into());
        }
        Ok(())
    }
}

fn max_blank_run(text: &str) -> usize {
    let mut best = 0;
    let mut run = 0;
    for line in text.split('\n') {
        if line.trim().is_empty() {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

/// All checks that fire on `text`, in [`PreliminaryCheck::ORDER`].
pub fn firing_checks(text: &str, cfg: &PreliminaryConfig) -> Vec<PreliminaryCheck> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let n = words.len();
    let mut fired = Vec::new();
    let mut fire = |c: PreliminaryCheck, cond: bool| {
        if cond && !cfg.disabled.contains(&c) {
            fired.push(c);
        }
    };
    if n == 0 {
        fire(PreliminaryCheck::EmptyText, true);
        return fired;
    }
    let lowered = crate::text::collapse_whitespace(&text.to_lowercase());
    fire(PreliminaryCheck::LoremIpsum, lowered.contains("lorem ipsum"));
    fire(PreliminaryCheck::TooShort, n < cfg.min_words);
    fire(PreliminaryCheck::TooLong, n > cfg.max_words);
    let mean_len = words.iter().map(|w| w.chars().count()).sum::<usize>() as f64 / n as f64;
    fire(
        PreliminaryCheck::MeanWordLength,
        mean_len < cfg.min_mean_word_length || mean_len > cfg.max_mean_word_length,
    );
    fire(PreliminaryCheck::SymbolRatio, symbol_count(text) as f64 / n as f64 > cfg.max_symbol_ratio);
    let stop = StopWords::english();
    let mut distinct_stop: Vec<String> =
        words.iter().filter(|w| stop.contains(w)).map(|w| crate::text::stop_key(w)).collect();
    distinct_stop.sort();
    distinct_stop.dedup();
    fire(PreliminaryCheck::FewStopWords, distinct_stop.len() < cfg.min_distinct_stop_words);
    fire(PreliminaryCheck::LineBreaks, max_blank_run(text) > cfg.max_blank_lines);
    let mut counts: HashMap<String, usize> = HashMap::new();
    for w in &words {
        *counts.entry(w.to_lowercase()).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    fire(PreliminaryCheck::WordRepetition, top as f64 / n as f64 > cfg.max_top_word_fraction);
    fire(PreliminaryCheck::ExcessiveDigits, digit_fraction(text) > cfg.max_digit_fraction);
    fired
}

pub fn preliminary_filter(doc: &StreamDocument, cfg: &PreliminaryConfig) -> FilterVerdict {
    let fired = firing_checks(&to_text_corpus(doc), cfg);
    let triggered_rules: Vec<String> = fired.iter().map(|c| c.code().to_string()).collect();
    let decision = match fired.first() {
        Some(c) => Decision::Drop(c.code().to_string()),
        None => Decision::Keep,
    };
    FilterVerdict { decision, triggered_rules }
}
