//! The detailed rule engine.
//!
//! A rule set is loaded from TOML. Each rule names an implementation
//! (`template`, defaulting to the rule id) whose parameters are checked at
//! load time, so a bad config fails before any document is read:
//!
//! ```toml
//! [[rule]]
//! id = "social_media_keywords"
//! kind = "paragraph_transform"
//! language = "en"
//! [rule.params]
//! keywords = ["facebook", "twitter"]
//! ```

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Decision, FilterVerdict};
use crate::stream_format::{to_text_corpus, DocumentMeta, ElementTag, StreamDocument, UNSCORED};
use crate::text::{digit_fraction, StopWords};

const ENGLISH_RULES: &str = include_str!("../../data/rules_en.toml");

#[derive(Debug, Error)]
pub enum RuleConfigError {
    #[error("rule config is not valid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("duplicate rule id {0:?}")]
    DuplicateId(String),
    #[error("rule {id:?}: unknown rule template {template:?}")]
    UnknownTemplate { id: String, template: String },
    #[error("rule {id:?}: template {template:?} is a {expected:?} rule, config says {found:?}")]
    KindMismatch { id: String, template: String, expected: RuleKind, found: RuleKind },
    #[error("rule {id:?}: bad params: {message}")]
    Params { id: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    /// Rewrites or deletes individual paragraphs.
    ParagraphTransform,
    /// Keeps or drops the whole document.
    DocumentVerdict,
}

static URL_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)[^\s<>]+").unwrap());

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct NewlineParams {
    max_newlines: usize,
}
impl Default for NewlineParams {
    fn default() -> Self {
        Self { max_newlines: 2 }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct NoParams {}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct KeywordParams {
    keywords: Vec<String>,
}
impl Default for KeywordParams {
    fn default() -> Self {
        Self { keywords: ["facebook", "twitter", "instagram", "subscribe", "follow us"].map(String::from).to_vec() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FractionParams {
    max_fraction: f64,
}
impl Default for FractionParams {
    fn default() -> Self {
        Self { max_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SuffixParams {
    suffixes: Vec<String>,
}
impl Default for SuffixParams {
    fn default() -> Self {
        Self { suffixes: vec!["readmore".into(), "read more".into()] }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct UppercaseParams {
    max_fraction: f64,
    min_letters: usize,
}
impl Default for UppercaseParams {
    fn default() -> Self {
        Self { max_fraction: 0.5, min_letters: 20 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ShortParams {
    max_words: usize,
}
impl Default for ShortParams {
    fn default() -> Self {
        Self { max_words: 2 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MinFractionParams {
    min_fraction: f64,
}
impl Default for MinFractionParams {
    fn default() -> Self {
        Self { min_fraction: 0.04 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaParams {
    field: String,
    max: f64,
}

/// Compiled rule behaviour.
#[derive(Debug, Clone)]
enum RuleImpl {
    AbnormalNewlines { pattern: Regex, replacement: String },
    StripUrls,
    Keywords { pattern: Regex },
    SingleWord,
    HighDigit { max_fraction: f64 },
    Suffix { suffixes: Vec<String> },
    Uppercase { max_fraction: f64, min_letters: usize },
    ShortNearRemoved { max_words: usize },
    FewStopwords { min_fraction: f64 },
    NonletterWords { max_fraction: f64 },
    MetaAbove { field: String, max: f64 },
}

/// Names of the built-in rule implementations with their kinds.
pub const TEMPLATES: [(&str, RuleKind); 12] = [
    ("abnormal_newlines", RuleKind::ParagraphTransform),
    ("strip_urls", RuleKind::ParagraphTransform),
    ("social_media_keywords", RuleKind::ParagraphTransform),
    ("keyword_paragraph", RuleKind::ParagraphTransform),
    ("single_word_paragraph", RuleKind::ParagraphTransform),
    ("high_digit_paragraph", RuleKind::ParagraphTransform),
    ("readmore_suffix", RuleKind::ParagraphTransform),
    ("uppercase_heavy", RuleKind::ParagraphTransform),
    ("short_paragraph", RuleKind::ParagraphTransform),
    ("doc_few_stopwords", RuleKind::DocumentVerdict),
    ("doc_nonletter_words", RuleKind::DocumentVerdict),
    ("meta_threshold", RuleKind::DocumentVerdict),
];

fn params<T: DeserializeOwned + Default>(id: &str, table: &toml::Table) -> Result<T, RuleConfigError> {
    if table.is_empty() {
        return Ok(T::default());
    }
    toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| RuleConfigError::Params { id: id.to_string(), message: e.message().to_string() })
}

fn check_fraction(id: &str, name: &str, v: f64) -> Result<f64, RuleConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(RuleConfigError::Params { id: id.to_string(), message: format!("{name} must be in [0, 1], got {v}") })
    }
}

fn keyword_regex(id: &str, keywords: &[String]) -> Result<Regex, RuleConfigError> {
    let words: Vec<String> =
        keywords.iter().map(|k| k.trim()).filter(|k| !k.is_empty()).map(regex::escape).collect();
    if words.is_empty() {
        return Err(RuleConfigError::Params { id: id.to_string(), message: "keywords must not be empty".into() });
    }
    Regex::new(&format!(r"(?i)\b(?:{})\b", words.join("|")))
        .map_err(|e| RuleConfigError::Params { id: id.to_string(), message: e.to_string() })
}

fn compile(id: &str, template: &str, table: &toml::Table) -> Result<RuleImpl, RuleConfigError> {
    Ok(match template {
        "abnormal_newlines" => {
            let p: NewlineParams = params(id, table)?;
            if p.max_newlines == 0 {
                return Err(RuleConfigError::Params { id: id.into(), message: "max_newlines must be ≥ 1".into() });
            }
            RuleImpl::AbnormalNewlines {
                pattern: Regex::new(&format!(r"\n{{{},}}", p.max_newlines + 1)).expect("newline pattern"),
                replacement: "\n".repeat(p.max_newlines),
            }
        }
        "strip_urls" => {
            params::<NoParams>(id, table)?;
            RuleImpl::StripUrls
        }
        "social_media_keywords" | "keyword_paragraph" => {
            let p: KeywordParams = params(id, table)?;
            RuleImpl::Keywords { pattern: keyword_regex(id, &p.keywords)? }
        }
        "single_word_paragraph" => {
            params::<NoParams>(id, table)?;
            RuleImpl::SingleWord
        }
        "high_digit_paragraph" => {
            let p: FractionParams = params(id, table)?;
            RuleImpl::HighDigit { max_fraction: check_fraction(id, "max_fraction", p.max_fraction)? }
        }
        "readmore_suffix" => {
            let p: SuffixParams = params(id, table)?;
            RuleImpl::Suffix { suffixes: p.suffixes.iter().map(|s| s.to_lowercase()).collect() }
        }
        "uppercase_heavy" => {
            let p: UppercaseParams = params(id, table)?;
            RuleImpl::Uppercase {
                max_fraction: check_fraction(id, "max_fraction", p.max_fraction)?,
                min_letters: p.min_letters,
            }
        }
        "short_paragraph" => {
            let p: ShortParams = params(id, table)?;
            RuleImpl::ShortNearRemoved { max_words: p.max_words }
        }
        "doc_few_stopwords" => {
            let p: MinFractionParams = params(id, table)?;
            RuleImpl::FewStopwords { min_fraction: check_fraction(id, "min_fraction", p.min_fraction)? }
        }
        "doc_nonletter_words" => {
            let p: FractionParams = if table.is_empty() {
                FractionParams { max_fraction: 0.3 }
            } else {
                params(id, table)?
            };
            RuleImpl::NonletterWords { max_fraction: check_fraction(id, "max_fraction", p.max_fraction)? }
        }
        "meta_threshold" => {
            let p: MetaParams = toml::Value::Table(table.clone()).try_into().map_err(|e: toml::de::Error| {
                RuleConfigError::Params { id: id.to_string(), message: e.message().to_string() }
            })?;
            if !DocumentMeta::SCORE_FIELDS.contains(&p.field.as_str()) {
                return Err(RuleConfigError::Params { id: id.into(), message: format!("unknown meta field {:?}", p.field) });
            }
            RuleImpl::MetaAbove { field: p.field, max: check_fraction(id, "max", p.max)? }
        }
        other => {
            return Err(RuleConfigError::UnknownTemplate { id: id.to_string(), template: other.to_string() })
        }
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleSpec {
    id: String,
    kind: RuleKind,
    #[serde(default = "default_language")]
    language: String,
    #[serde(default)]
    template: Option<String>,
    #[serde(default)]
    params: toml::Table,
    #[serde(default)]
    measured_fpr: Option<f64>,
}

fn default_language() -> String {
    "en".to_string()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    #[serde(default)]
    rule: Vec<RuleSpec>,
}

#[derive(Debug, Clone)]
pub struct FilterRule {
    pub id: String,
    pub language: String,
    pub kind: RuleKind,
    pub template: String,
    pub params: toml::Table,
    /// Set once the rule has been evaluated against annotations.
    pub measured_fpr: Option<f64>,
    imp: RuleImpl,
}

impl PartialEq for FilterRule {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.language == other.language
            && self.kind == other.kind
            && self.template == other.template
            && self.params == other.params
            && self.measured_fpr == other.measured_fpr
    }
}

impl FilterRule {
    pub fn new(id: &str, kind: RuleKind, template: &str, params: toml::Table) -> Result<Self, RuleConfigError> {
        Self::from_spec(RuleSpec {
            id: id.to_string(),
            kind,
            language: default_language(),
            template: Some(template.to_string()),
            params,
            measured_fpr: None,
        })
    }

    fn from_spec(spec: RuleSpec) -> Result<Self, RuleConfigError> {
        let template = spec.template.clone().unwrap_or_else(|| spec.id.clone());
        let expected = TEMPLATES
            .iter()
            .find(|(name, _)| *name == template)
            .map(|(_, k)| *k)
            .ok_or_else(|| RuleConfigError::UnknownTemplate { id: spec.id.clone(), template: template.clone() })?;
        if expected != spec.kind {
            return Err(RuleConfigError::KindMismatch { id: spec.id, template, expected, found: spec.kind });
        }
        let imp = compile(&spec.id, &template, &spec.params)?;
        Ok(Self {
            id: spec.id,
            language: spec.language,
            kind: spec.kind,
            template,
            params: spec.params,
            measured_fpr: spec.measured_fpr,
            imp,
        })
    }

    fn to_spec(&self) -> RuleSpec {
        RuleSpec {
            id: self.id.clone(),
            kind: self.kind,
            language: self.language.clone(),
            template: (self.template != self.id).then(|| self.template.clone()),
            params: self.params.clone(),
            measured_fpr: self.measured_fpr,
        }
    }

    /// Rules apply to documents whose primary language subtag matches, and to
    /// documents of undetermined language.
    pub fn applies_to(&self, doc_language: &str) -> bool {
        let primary = |t: &str| t.split('-').next().unwrap_or("").to_ascii_lowercase();
        let doc = primary(doc_language);
        doc == "und" || doc.is_empty() || doc == primary(&self.language)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ParagraphOutcome {
    Unchanged,
    Rewrite(String),
    Remove,
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

impl FilterRule {
    fn transform(&self, text: &str, near_removed: bool) -> ParagraphOutcome {
        use ParagraphOutcome::*;
        match &self.imp {
            RuleImpl::AbnormalNewlines { pattern, replacement } => {
                let out = pattern.replace_all(text, replacement.as_str());
                if out == text {
                    Unchanged
                } else {
                    Rewrite(out.into_owned())
                }
            }
            RuleImpl::StripUrls => {
                if !URL_TOKEN.is_match(text) {
                    return Unchanged;
                }
                let stripped = URL_TOKEN.replace_all(text, "");
                let lines: Vec<String> = stripped.split('\n').map(crate::text::collapse_whitespace).collect();
                Rewrite(lines.join("\n").trim().to_string())
            }
            RuleImpl::Keywords { pattern } => {
                if pattern.is_match(text) {
                    Remove
                } else {
                    Unchanged
                }
            }
            RuleImpl::SingleWord => {
                if word_count(text) <= 1 {
                    Remove
                } else {
                    Unchanged
                }
            }
            RuleImpl::HighDigit { max_fraction } => {
                if digit_fraction(text) > *max_fraction {
                    Remove
                } else {
                    Unchanged
                }
            }
            RuleImpl::Suffix { suffixes } => {
                let tail = text
                    .trim_end_matches(|c: char| !c.is_alphanumeric())
                    .to_lowercase();
                let tail = crate::text::collapse_whitespace(&tail);
                if suffixes.iter().any(|s| tail.ends_with(s.as_str())) {
                    Remove
                } else {
                    Unchanged
                }
            }
            RuleImpl::Uppercase { max_fraction, min_letters } => {
                let letters: Vec<char> = text.chars().filter(|c| c.is_alphabetic()).collect();
                if letters.len() < *min_letters {
                    return Unchanged;
                }
                let upper = letters.iter().filter(|c| c.is_uppercase()).count();
                if upper as f64 / letters.len() as f64 > *max_fraction {
                    Remove
                } else {
                    Unchanged
                }
            }
            RuleImpl::ShortNearRemoved { max_words } => {
                if near_removed && word_count(text) <= *max_words {
                    Remove
                } else {
                    Unchanged
                }
            }
            _ => Unchanged,
        }
    }

    fn drops(&self, doc: &StreamDocument) -> bool {
        match &self.imp {
            RuleImpl::FewStopwords { min_fraction } => {
                let text = to_text_corpus(doc);
                let words: Vec<&str> = text.split_whitespace().collect();
                let stop = StopWords::english();
                let hits = words.iter().filter(|w| stop.contains(w)).count();
                let frac = if words.is_empty() { 0.0 } else { hits as f64 / words.len() as f64 };
                frac < *min_fraction
            }
            RuleImpl::NonletterWords { max_fraction } => {
                let text = to_text_corpus(doc);
                let words: Vec<&str> = text.split_whitespace().collect();
                if words.is_empty() {
                    return false;
                }
                let bad = words.iter().filter(|w| !w.chars().any(char::is_alphabetic)).count();
                bad as f64 / words.len() as f64 > *max_fraction
            }
            RuleImpl::MetaAbove { field, max } => {
                let v = doc.meta.score(field).unwrap_or(UNSCORED);
                v != UNSCORED && v > *max
            }
            _ => false,
        }
    }
}

/// An ordered rule set with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSet {
    pub rules: Vec<FilterRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<FilterRule>) -> Result<Self, RuleConfigError> {
        let mut seen = HashSet::new();
        for r in &rules {
            if !seen.insert(r.id.clone()) {
                return Err(RuleConfigError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self { rules })
    }

    pub fn from_toml(source: &str) -> Result<Self, RuleConfigError> {
        let file: RuleFile = toml::from_str(source)?;
        let rules = file.rule.into_iter().map(FilterRule::from_spec).collect::<Result<Vec<_>, _>>()?;
        Self::new(rules)
    }

    pub fn to_toml(&self) -> String {
        let file = RuleFile { rule: self.rules.iter().map(FilterRule::to_spec).collect() };
        toml::to_string(&file).expect("rule set serialises")
    }

    /// The bundled English rule set.
    pub fn english() -> Self {
        Self::from_toml(ENGLISH_RULES).expect("bundled rules are valid")
    }

    pub fn contains(&self, id: &str) -> bool {
        self.rules.iter().any(|r| r.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.rules.iter().map(|r| r.id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Applies paragraph transforms rule by rule over every text element, then
/// evaluates document verdict rules on the transformed document.
///
/// Image and other non-text elements are never touched, and surviving
/// elements keep their order. A short paragraph counts as adjacent to a
/// removal when the element directly before or after it was removed by an
/// earlier rule.
pub fn apply_detailed_rules(doc: &StreamDocument, ruleset: &RuleSet) -> (StreamDocument, FilterVerdict) {
    let n = doc.elements.len();
    let mut contents: Vec<String> = doc.elements.iter().map(|e| e.content.clone()).collect();
    let mut removed = vec![false; n];
    let mut fired = vec![false; ruleset.rules.len()];

    for (ri, rule) in ruleset.rules.iter().enumerate() {
        if rule.kind != RuleKind::ParagraphTransform || !rule.applies_to(&doc.meta.language) {
            continue;
        }
        let before = removed.clone();
        for i in 0..n {
            if doc.elements[i].tag != ElementTag::Text || removed[i] {
                continue;
            }
            let near = (i > 0 && before[i - 1]) || (i + 1 < n && before[i + 1]);
            match rule.transform(&contents[i], near) {
                ParagraphOutcome::Unchanged => {}
                ParagraphOutcome::Rewrite(s) => {
                    fired[ri] = true;
                    if s.trim().is_empty() {
                        removed[i] = true;
                    } else {
                        contents[i] = s;
                    }
                }
                ParagraphOutcome::Remove => {
                    fired[ri] = true;
                    removed[i] = true;
                }
            }
        }
    }

    let mut out = doc.clone();
    out.elements = doc
        .elements
        .iter()
        .zip(contents)
        .zip(&removed)
        .filter(|(_, gone)| !**gone)
        .map(|((e, content), _)| {
            let mut e = e.clone();
            if e.tag == ElementTag::Text {
                e.content = content;
            }
            e
        })
        .collect();

    let mut drop_reason = None;
    let emptied = out.text_count() == 0 && doc.text_count() > 0;
    for (ri, rule) in ruleset.rules.iter().enumerate() {
        if emptied {
            break;
        }
        if rule.kind == RuleKind::DocumentVerdict && rule.applies_to(&doc.meta.language) && rule.drops(&out) {
            fired[ri] = true;
            drop_reason.get_or_insert_with(|| rule.id.clone());
        }
    }
    let transformed = ruleset
        .rules
        .iter()
        .zip(&fired)
        .any(|(r, f)| *f && r.kind == RuleKind::ParagraphTransform);
    let decision = match drop_reason {
        Some(id) => Decision::Drop(id),
        None if emptied => Decision::Drop(NO_TEXT_LEFT.to_string()),
        None if transformed => Decision::Modified,
        None => Decision::Keep,
    };
    let triggered_rules = ruleset.rules.iter().zip(&fired).filter(|(_, f)| **f).map(|(r, _)| r.id.clone()).collect();
    (out, FilterVerdict { decision, triggered_rules })
}

/// Drop reason when transforms removed every text element.
pub const NO_TEXT_LEFT: &str = "no_text_left";
