//! Trigger ratios and false-positive rates of rules against human labels.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::rules::{apply_detailed_rules, RuleSet};
use crate::stream_format::StreamDocument;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("annotations reference unknown document ids: {0:?}")]
    UnknownIds(Vec<String>),
    #[error("document {0:?} is annotated more than once")]
    DuplicateAnnotation(String),
    #[error("annotation line {line}: {message}")]
    BadLine { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HumanVerdict {
    Good,
    /// Carries the problem tag the annotator assigned, if any.
    Bad(Option<String>),
}

impl HumanVerdict {
    pub fn is_good(&self) -> bool {
        matches!(self, HumanVerdict::Good)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSample {
    pub doc_id: String,
    pub verdict: HumanVerdict,
    /// Optional per-rule judgements (`true` = the rule was right to fire).
    pub rule_verdicts: Option<BTreeMap<String, bool>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationLine {
    doc_id: String,
    verdict: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    problem: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rules: Option<BTreeMap<String, bool>>,
}

/// One verdict per document id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    samples: BTreeMap<String, AnnotatedSample>,
    /// Every bad document in the corpus is labelled; enables miss rate.
    pub complete: bool,
}

impl AnnotationSet {
    pub fn new(samples: Vec<AnnotatedSample>) -> Result<Self, EvalError> {
        let mut map = BTreeMap::new();
        for s in samples {
            if map.contains_key(&s.doc_id) {
                return Err(EvalError::DuplicateAnnotation(s.doc_id));
            }
            map.insert(s.doc_id.clone(), s);
        }
        Ok(Self { samples: map, complete: false })
    }

    /// Parses `{doc_id, verdict: "good"|"bad", problem?}` lines.
    pub fn from_jsonl(source: &str) -> Result<Self, EvalError> {
        let mut samples = Vec::new();
        for (i, line) in source.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| EvalError::BadLine { line: i + 1, message };
            let l: AnnotationLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            let verdict = match l.verdict.as_str() {
                "good" => HumanVerdict::Good,
                "bad" => HumanVerdict::Bad(l.problem),
                other => return Err(bad(format!("verdict must be good or bad, got {other:?}"))),
            };
            samples.push(AnnotatedSample { doc_id: l.doc_id, verdict, rule_verdicts: l.rules });
        }
        Self::new(samples)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in self.samples.values() {
            let (verdict, problem) = match &s.verdict {
                HumanVerdict::Good => ("good", None),
                HumanVerdict::Bad(p) => ("bad", p.clone()),
            };
            let line = AnnotationLine {
                doc_id: s.doc_id.clone(),
                verdict: verdict.into(),
                problem,
                rules: s.rule_verdicts.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("annotation serialises"));
            out.push('\n');
        }
        out
    }

    pub fn get(&self, id: &str) -> Option<&AnnotatedSample> {
        self.samples.get(id)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.keys().map(String::as_str)
    }

    /// Annotations restricted to the given ids.
    pub fn restrict(&self, ids: &HashSet<&str>) -> Self {
        Self {
            samples: self.samples.iter().filter(|(k, _)| ids.contains(k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect(),
            complete: self.complete,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleEvaluation {
    pub rule: String,
    pub fired: usize,
    pub trigger_ratio: f64,
    /// Fired documents that carry an annotation.
    pub annotated_fired: usize,
    pub good_fired: usize,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub documents: usize,
    pub rules: Vec<RuleEvaluation>,
    /// Bad documents no rule fired on, over all bad documents. Only computed
    /// when the annotation set is marked complete.
    pub miss_rate: Option<f64>,
    /// Per-document fired rule ids, in corpus order.
    #[serde(skip)]
    pub fired_by_doc: Vec<(String, Vec<String>)>,
}

impl EvaluationReport {
    pub fn get(&self, rule: &str) -> Option<&RuleEvaluation> {
        self.rules.iter().find(|r| r.rule == rule)
    }

    /// `rule\ttrigger_ratio\tfpr` with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("rule\ttrigger_ratio\tfpr\n");
        for r in &self.rules {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}", r.rule, r.trigger_ratio, r.fpr);
        }
        out
    }
}

/// Applies the rule set to every document and scores each rule.
///
/// `fpr = good ∧ fired / annotated ∧ fired`; a rule with no annotated
/// firing reports 0.
pub fn evaluate_ruleset(
    corpus: &[StreamDocument],
    annotations: &AnnotationSet,
    ruleset: &RuleSet,
) -> Result<EvaluationReport, EvalError> {
    let known: HashSet<&str> = corpus.iter().map(|d| d.id.as_str()).collect();
    let unknown: Vec<String> = annotations.ids().filter(|id| !known.contains(id)).map(String::from).collect();
    if !unknown.is_empty() {
        return Err(EvalError::UnknownIds(unknown));
    }

    let fired_by_doc: Vec<(String, Vec<String>)> = {
        use rayon::prelude::*;
        corpus
            .par_iter()
            .map(|d| (d.id.clone(), apply_detailed_rules(d, ruleset).1.triggered_rules))
            .collect()
    };

    let mut fired: HashMap<&str, usize> = HashMap::new();
    let mut annotated: HashMap<&str, usize> = HashMap::new();
    let mut good: HashMap<&str, usize> = HashMap::new();
    let (mut bad_total, mut bad_missed) = (0usize, 0usize);
    for (id, rules) in &fired_by_doc {
        let label = annotations.get(id);
        for r in rules {
            *fired.entry(r).or_default() += 1;
            if let Some(s) = label {
                *annotated.entry(r).or_default() += 1;
                if s.verdict.is_good() {
                    *good.entry(r).or_default() += 1;
                }
            }
        }
        if let Some(s) = label {
            if !s.verdict.is_good() {
                bad_total += 1;
                if rules.is_empty() {
                    bad_missed += 1;
                }
            }
        }
    }

    let n = corpus.len();
    let rules = ruleset
        .rules
        .iter()
        .map(|r| {
            let f = fired.get(r.id.as_str()).copied().unwrap_or(0);
            let a = annotated.get(r.id.as_str()).copied().unwrap_or(0);
            let g = good.get(r.id.as_str()).copied().unwrap_or(0);
            RuleEvaluation {
                rule: r.id.clone(),
                fired: f,
                trigger_ratio: if n == 0 { 0.0 } else { f as f64 / n as f64 },
                annotated_fired: a,
                good_fired: g,
                fpr: if a == 0 { 0.0 } else { g as f64 / a as f64 },
            }
        })
        .collect();
    let miss_rate = (annotations.complete && bad_total > 0).then(|| bad_missed as f64 / bad_total as f64);
    Ok(EvaluationReport { documents: n, rules, miss_rate, fired_by_doc })
}
