//! Per-document quality metrics and exact corpus histograms.
//!
//! "Tokens" here are whitespace words, not model tokens; reports label the
//! column `word_token_length` so the two are not confused.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream_format::{to_text_corpus, StreamDocument};
use crate::text::{symbol_count, StopWords};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityMetrics {
    pub line_number: usize,
    /// Words per line.
    pub line_lengths: Vec<usize>,
    pub token_length: usize,
    pub non_alpha_fraction: f64,
    pub unique_words_fraction: f64,
    pub mean_word_length: f64,
    pub sentence_number: usize,
    pub stop_word_fraction: f64,
    pub symbol_to_word_ratio: f64,
    pub image_count: usize,
    /// No words; every word-denominated field is zero.
    pub degenerate: bool,
}

/// The scalar metrics, in report order.
pub const METRIC_IDS: [&str; 9] = [
    "line_number",
    "token_length",
    "non_alpha_fraction",
    "unique_words_fraction",
    "mean_word_length",
    "sentence_number",
    "stop_word_fraction",
    "symbol_to_word_ratio",
    "image_count",
];

impl QualityMetrics {
    pub fn get(&self, id: &str) -> Option<f64> {
        Some(match id {
            "line_number" => self.line_number as f64,
            "token_length" => self.token_length as f64,
            "non_alpha_fraction" => self.non_alpha_fraction,
            "unique_words_fraction" => self.unique_words_fraction,
            "mean_word_length" => self.mean_word_length,
            "sentence_number" => self.sentence_number as f64,
            "stop_word_fraction" => self.stop_word_fraction,
            "symbol_to_word_ratio" => self.symbol_to_word_ratio,
            "image_count" => self.image_count as f64,
            _ => return None,
        })
    }
}

/// Sentences are maximal runs ended by `.`, `!`, `?` or the end of text
/// that contain something besides whitespace. Abbreviations split too.
pub fn sentence_count(text: &str) -> usize {
    text.split(['.', '!', '?']).filter(|s| !s.trim().is_empty()).count()
}

pub fn compute_metrics(doc: &StreamDocument) -> QualityMetrics {
    let text = to_text_corpus(doc);
    metrics_for_text(&text, doc.image_count())
}

pub fn metrics_for_text(text: &str, image_count: usize) -> QualityMetrics {
    let words: Vec<&str> = text.split_whitespace().collect();
    let n = words.len();
    if n == 0 {
        return QualityMetrics {
            line_number: 0,
            line_lengths: Vec::new(),
            token_length: 0,
            non_alpha_fraction: 0.0,
            unique_words_fraction: 0.0,
            mean_word_length: 0.0,
            sentence_number: 0,
            stop_word_fraction: 0.0,
            symbol_to_word_ratio: 0.0,
            image_count,
            degenerate: true,
        };
    }
    let line_lengths: Vec<usize> = text.split('\n').map(|l| l.split_whitespace().count()).collect();
    let (mut visible, mut non_alnum) = (0usize, 0usize);
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        visible += 1;
        if !c.is_alphanumeric() {
            non_alnum += 1;
        }
    }
    let letters: usize = words.iter().map(|w| w.chars().filter(|c| c.is_alphabetic()).count()).sum();
    let distinct: HashSet<String> = words.iter().map(|w| w.to_lowercase()).collect();
    let stop = StopWords::english();
    let stops = words.iter().filter(|w| stop.contains(w)).count();
    QualityMetrics {
        line_number: line_lengths.len(),
        line_lengths,
        token_length: n,
        non_alpha_fraction: non_alnum as f64 / visible as f64,
        unique_words_fraction: distinct.len() as f64 / n as f64,
        mean_word_length: letters as f64 / n as f64,
        sentence_number: sentence_count(text),
        stop_word_fraction: stops as f64 / n as f64,
        symbol_to_word_ratio: symbol_count(text) as f64 / n as f64,
        image_count,
        degenerate: false,
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum HistogramError {
    #[error("histogram {0}: need at least two strictly increasing edges")]
    BadEdges(String),
    #[error("cannot merge histograms with different edges for {0}")]
    EdgeMismatch(String),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

/// Bins are `[e_i, e_{i+1})`; values below the first edge land in the first
/// bin and values at or above the last edge in the last one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub metric: String,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn new(metric: &str, edges: Vec<f64>) -> Result<Self, HistogramError> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(HistogramError::BadEdges(metric.to_string()));
        }
        let bins = edges.len() - 1;
        Ok(Self { metric: metric.to_string(), edges, counts: vec![0; bins], total: 0 })
    }

    pub fn bin_of(&self, value: f64) -> usize {
        // first edge greater than value, minus one
        let i = self.edges.partition_point(|e| *e <= value);
        i.saturating_sub(1).min(self.counts.len() - 1)
    }

    pub fn add(&mut self, value: f64) {
        let b = self.bin_of(value);
        self.counts[b] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &Histogram) -> Result<(), HistogramError> {
        if self.edges != other.edges {
            return Err(HistogramError::EdgeMismatch(self.metric.clone()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    /// `lower\tupper\tcount` rows with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("lower\tupper\tcount\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{c}\n", self.edges[i], self.edges[i + 1]));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinSpec {
    pub edges: BTreeMap<String, Vec<f64>>,
    pub token_bucket_width: usize,
}

impl Default for BinSpec {
    fn default() -> Self {
        let fractions: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let mut edges = BTreeMap::new();
        edges.insert("line_number".into(), vec![0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0]);
        edges.insert("token_length".into(), vec![0.0, 50.0, 100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0, 10000.0]);
        edges.insert("non_alpha_fraction".into(), fractions.clone());
        edges.insert("unique_words_fraction".into(), fractions.clone());
        edges.insert("mean_word_length".into(), (0..=12).map(f64::from).collect());
        edges.insert("sentence_number".into(), vec![0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0]);
        edges.insert("stop_word_fraction".into(), fractions);
        edges.insert("symbol_to_word_ratio".into(), vec![0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0]);
        edges.insert("image_count".into(), (0..=10).map(f64::from).chain([20.0, 50.0]).collect());
        Self { edges, token_bucket_width: 100 }
    }
}

impl BinSpec {
    pub fn validate(&self) -> Result<(), HistogramError> {
        for (k, e) in &self.edges {
            if !METRIC_IDS.contains(&k.as_str()) {
                return Err(HistogramError::UnknownMetric(k.clone()));
            }
            Histogram::new(k, e.clone())?;
        }
        if self.token_bucket_width == 0 {
            return Err(HistogramError::BadEdges("token_bucket_width".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointCell {
    pub image_count: usize,
    /// Lower edge of the word-token bucket.
    pub token_bucket: usize,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub documents: u64,
    pub degenerate: u64,
    pub histograms: BTreeMap<String, Histogram>,
    pub joint: BTreeMap<(usize, usize), u64>,
    pub token_bucket_width: usize,
    image_sum: u64,
    token_sum: u64,
}

impl Aggregate {
    pub fn empty(spec: &BinSpec) -> Result<Self, HistogramError> {
        spec.validate()?;
        let histograms = spec
            .edges
            .iter()
            .map(|(k, e)| Ok((k.clone(), Histogram::new(k, e.clone())?)))
            .collect::<Result<_, HistogramError>>()?;
        Ok(Self {
            documents: 0,
            degenerate: 0,
            histograms,
            joint: BTreeMap::new(),
            token_bucket_width: spec.token_bucket_width,
            image_sum: 0,
            token_sum: 0,
        })
    }

    pub fn add(&mut self, m: &QualityMetrics) {
        self.documents += 1;
        self.degenerate += m.degenerate as u64;
        for (k, h) in &mut self.histograms {
            h.add(m.get(k).expect("validated metric id"));
        }
        let bucket = m.token_length / self.token_bucket_width * self.token_bucket_width;
        *self.joint.entry((m.image_count, bucket)).or_default() += 1;
        self.image_sum += m.image_count as u64;
        self.token_sum += m.token_length as u64;
    }

    pub fn merge(&mut self, other: &Aggregate) -> Result<(), HistogramError> {
        for (k, h) in &mut self.histograms {
            if let Some(o) = other.histograms.get(k) {
                h.merge(o)?;
            }
        }
        for (k, v) in &other.joint {
            *self.joint.entry(*k).or_default() += v;
        }
        self.documents += other.documents;
        self.degenerate += other.degenerate;
        self.image_sum += other.image_sum;
        self.token_sum += other.token_sum;
        Ok(())
    }

    pub fn mean_images(&self) -> f64 {
        if self.documents == 0 {
            0.0
        } else {
            self.image_sum as f64 / self.documents as f64
        }
    }

    pub fn mean_tokens(&self) -> f64 {
        if self.documents == 0 {
            0.0
        } else {
            self.token_sum as f64 / self.documents as f64
        }
    }

    pub fn joint_json(&self) -> serde_json::Value {
        let cells: Vec<JointCell> = self
            .joint
            .iter()
            .map(|(&(image_count, token_bucket), &count)| JointCell { image_count, token_bucket, count })
            .collect();
        serde_json::json!({
            "documents": self.documents,
            "token_bucket_width": self.token_bucket_width,
            "token_unit": "word",
            "mean_images": self.mean_images(),
            "mean_word_tokens": self.mean_tokens(),
            "cells": cells,
        })
    }
}

/// Exact histograms and the joint image/token table for a metric stream.
pub fn aggregate<'a, I>(metrics: I, spec: &BinSpec) -> Result<Aggregate, HistogramError>
where
    I: IntoIterator<Item = &'a QualityMetrics>,
{
    let mut agg = Aggregate::empty(spec)?;
    for m in metrics {
        agg.add(m);
    }
    Ok(agg)
}

/// Parallel map and merge over documents.
pub fn aggregate_documents(docs: &[StreamDocument], spec: &BinSpec) -> Result<Aggregate, HistogramError> {
    use rayon::prelude::*;
    let empty = Aggregate::empty(spec)?;
    Ok(docs
        .par_iter()
        .fold(
            || empty.clone(),
            |mut a, d| {
                a.add(&compute_metrics(d));
                a
            },
        )
        .reduce(
            || empty.clone(),
            |mut a, b| {
                a.merge(&b).expect("same spec");
                a
            },
        ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_cat_sat() {
        let m = metrics_for_text("The cat sat.", 0);
        assert_eq!((m.line_number, m.token_length, m.sentence_number), (1, 3, 1));
        assert_eq!(m.mean_word_length, 3.0);
        assert_eq!(m.non_alpha_fraction, 0.1);
    }

    #[test]
    fn stop_fraction() {
        assert_eq!(metrics_for_text("the cat sat on the mat", 0).stop_word_fraction, 0.5);
    }

    #[test]
    fn degenerate() {
        let m = metrics_for_text(" \n ", 2);
        assert!(m.degenerate);
        assert_eq!((m.token_length, m.line_number, m.image_count), (0, 0, 2));
    }

    #[test]
    fn sentences() {
        assert_eq!(sentence_count("Hi! Really?? Yes. "), 3);
        assert_eq!(sentence_count("no terminator"), 1);
        assert_eq!(sentence_count("..."), 0);
    }

    #[test]
    fn histogram_bins() {
        let mut h = Histogram::new("line_number", vec![0.0, 2.0, 10.0]).unwrap();
        for v in [1.0, 1.0, 5.0] {
            h.add(v);
        }
        assert_eq!(h.counts, vec![2, 1]);
        h.add(-3.0);
        h.add(10.0);
        h.add(99.0);
        assert_eq!(h.counts, vec![3, 3]);
        assert_eq!(h.total, 6);
        assert!(Histogram::new("x", vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn joint_single_cell() {
        let m = QualityMetrics { image_count: 3, token_length: 757, ..metrics_for_text("a", 3) };
        let agg = aggregate(std::iter::repeat(&m).take(5), &BinSpec::default()).unwrap();
        assert_eq!(agg.joint.len(), 1);
        assert_eq!(agg.joint[&(3, 700)], 5);
        assert_eq!(agg.mean_images(), 3.0);
        let empty = aggregate(std::iter::empty(), &BinSpec::default()).unwrap();
        assert!(empty.histograms.values().all(|h| h.total == 0 && h.counts.iter().all(|c| *c == 0)));
    }
}
