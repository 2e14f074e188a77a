//! One iteration of the sample, annotate, promote loop.
//!
//! Each round samples `n` documents from the current corpus, measures the
//! candidate rules on that sample against human labels, promotes the ones
//! whose false-positive rate is within the threshold, and rewrites the corpus
//! with them. The rule set only ever grows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use super::evaluation::{evaluate_ruleset, AnnotationSet, EvalError};
use super::rules::{apply_detailed_rules, RuleConfigError, RuleSet};
use super::Decision;
use crate::stream_format::{to_text_corpus, StreamDocument};

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("sample size {n} exceeds corpus size {corpus}")]
    SampleTooLarge { n: usize, corpus: usize },
    #[error("{given} candidate rules exceed the per-round limit of {limit}")]
    TooManyCandidates { given: usize, limit: usize },
    #[error("candidate {0:?} is already in the rule set")]
    AlreadyPromoted(String),
    #[error("promote threshold must be in [0, 1], got {0}")]
    BadThreshold(f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Rules(#[from] RuleConfigError),
}

#[derive(Debug, Clone)]
pub struct FeedbackState {
    pub iteration: usize,
    pub rules: RuleSet,
    pub sample_size: usize,
    pub problems_per_round: usize,
    pub corpus: Vec<StreamDocument>,
}

impl FeedbackState {
    pub fn new(corpus: Vec<StreamDocument>, sample_size: usize, problems_per_round: usize) -> Self {
        Self { iteration: 0, rules: RuleSet::default(), sample_size, problems_per_round, corpus }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateOutcome {
    pub rule: String,
    pub trigger_ratio: f64,
    pub fpr: f64,
    pub promoted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    /// Iteration the round ran at (before the increment).
    pub iteration: usize,
    pub seed: u64,
    pub threshold: f64,
    pub sampled_ids: Vec<String>,
    pub candidates: Vec<CandidateOutcome>,
    pub docs_before: usize,
    pub docs_after: usize,
    #[serde(skip)]
    pub review_sheet: String,
}

impl RoundReport {
    pub fn promoted(&self) -> Vec<&str> {
        self.candidates.iter().filter(|c| c.promoted).map(|c| c.rule.as_str()).collect()
    }

    pub fn rejected(&self) -> Vec<&str> {
        self.candidates.iter().filter(|c| !c.promoted).map(|c| c.rule.as_str()).collect()
    }
}

#[derive(Serialize)]
struct ReviewLine<'a> {
    doc_id: &'a str,
    url: &'a str,
    text: String,
    triggered: &'a [String],
}

/// Sorted indices of `n` documents drawn without replacement.
pub fn sample_indices(corpus_len: usize, n: usize, seed: u64) -> Result<Vec<usize>, FeedbackError> {
    if n > corpus_len {
        return Err(FeedbackError::SampleTooLarge { n, corpus: corpus_len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, corpus_len, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn feedback_round(
    state: FeedbackState,
    candidates: &RuleSet,
    annotations: &AnnotationSet,
    promote_threshold: f64,
    seed: u64,
) -> Result<(FeedbackState, RoundReport), FeedbackError> {
    if !(0.0..=1.0).contains(&promote_threshold) {
        return Err(FeedbackError::BadThreshold(promote_threshold));
    }
    if candidates.len() > state.problems_per_round {
        return Err(FeedbackError::TooManyCandidates { given: candidates.len(), limit: state.problems_per_round });
    }
    if let Some(dup) = candidates.rules.iter().find(|c| state.rules.contains(&c.id)) {
        return Err(FeedbackError::AlreadyPromoted(dup.id.clone()));
    }

    let idx = sample_indices(state.corpus.len(), state.sample_size, seed)?;
    let sample: Vec<StreamDocument> = idx.iter().map(|&i| state.corpus[i].clone()).collect();
    let sample_ids = sample.iter().map(|d| d.id.as_str()).collect();
    let labels = annotations.restrict(&sample_ids);
    let eval = evaluate_ruleset(&sample, &labels, candidates)?;

    let mut outcomes = Vec::with_capacity(candidates.len());
    let mut promoted = Vec::new();
    for (rule, m) in candidates.rules.iter().zip(&eval.rules) {
        let ok = m.fpr <= promote_threshold;
        outcomes.push(CandidateOutcome { rule: rule.id.clone(), trigger_ratio: m.trigger_ratio, fpr: m.fpr, promoted: ok });
        if ok {
            let mut r = rule.clone();
            r.measured_fpr = Some(m.fpr);
            promoted.push(r);
        }
    }

    let mut review_sheet = String::new();
    for (doc, (_, fired)) in sample.iter().zip(&eval.fired_by_doc) {
        let line = ReviewLine { doc_id: &doc.id, url: &doc.meta.source_url, text: to_text_corpus(doc), triggered: fired };
        review_sheet.push_str(&serde_json::to_string(&line).expect("review line serialises"));
        review_sheet.push('\n');
    }

    let promoted_set = RuleSet::new(promoted.clone())?;
    let docs_before = state.corpus.len();
    let corpus: Vec<StreamDocument> = if promoted_set.is_empty() {
        state.corpus
    } else {
        state
            .corpus
            .into_iter()
            .filter_map(|d| {
                let (out, verdict) = apply_detailed_rules(&d, &promoted_set);
                (!matches!(verdict.decision, Decision::Drop(_))).then_some(out)
            })
            .collect()
    };

    let mut rules = state.rules.rules;
    rules.extend(promoted);
    let report = RoundReport {
        iteration: state.iteration,
        seed,
        threshold: promote_threshold,
        sampled_ids: sample.iter().map(|d| d.id.clone()).collect(),
        candidates: outcomes,
        docs_before,
        docs_after: corpus.len(),
        review_sheet,
    };
    let next = FeedbackState {
        iteration: state.iteration + 1,
        rules: RuleSet::new(rules)?,
        sample_size: state.sample_size,
        problems_per_round: state.problems_per_round,
        corpus,
    };
    Ok((next, report))
}
