//! Document filtering: cheap preliminary heuristics, the configurable rule
//! engine, and the tooling to measure and grow a rule set from labels.

pub mod evaluation;
pub mod feedback;
pub mod preliminary;
pub mod rules;

use serde::Serialize;

pub use evaluation::{evaluate_ruleset, AnnotatedSample, AnnotationSet, EvaluationReport, HumanVerdict, RuleEvaluation};
pub use feedback::{feedback_round, FeedbackState, RoundReport};
pub use preliminary::{preliminary_filter, PreliminaryCheck, PreliminaryConfig};
pub use rules::{apply_detailed_rules, FilterRule, RuleConfigError, RuleKind, RuleSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Decision {
    Keep,
    /// At least one paragraph transform changed the document.
    Modified,
    /// The primary reason code.
    Drop(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FilterVerdict {
    pub decision: Decision,
    pub triggered_rules: Vec<String>,
}

impl FilterVerdict {
    pub fn keep() -> Self {
        Self { decision: Decision::Keep, triggered_rules: Vec::new() }
    }

    pub fn is_drop(&self) -> bool {
        matches!(self.decision, Decision::Drop(_))
    }

    pub fn drop_reason(&self) -> Option<&str> {
        match &self.decision {
            Decision::Drop(r) => Some(r),
            _ => None,
        }
    }
}
