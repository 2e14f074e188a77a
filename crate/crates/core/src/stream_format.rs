//! The interleaved document model and its JSONL persistence.
//!
//! A [`StreamDocument`] is an ordered sequence of tagged elements (text,
//! image, header, ...) in page reading order plus a block of meta-annotation
//! scores. Scores hold [`UNSCORED`] (`-1`) until a scorer has run.
//!
//! One document serialises to one JSON line:
//!
//! ```text
//! {"id":..,"url":..,"timestamp":"2024-01-01T00:00:00Z","language":"en",
//!  "elements":[{"tag":"text","content":".."},{"tag":"image","image":{..}}],
//!  "meta":{"nsfw_text":..,"political":..,"toxic":..,"advertisement":..,"fluency":..}}
//! ```
//!
//! Unknown fields are rejected at every level.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel for a score that has not been computed yet.
pub const UNSCORED: f64 = -1.0;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown element tag {0:?}")]
    UnknownTag(String),
    #[error("unknown image status {0:?}")]
    UnknownStatus(String),
    #[error("invalid 64-bit hash {0:?}")]
    InvalidHash(String),
    #[error("invalid RFC 3339 timestamp {0:?}")]
    InvalidTimestamp(String),
    #[error("document {0:?} contains an interior NUL character")]
    InteriorNul(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElementTag {
    Text,
    Image,
    Code,
    Header,
    Detail,
    Quote,
    Video,
    Audio,
    Table,
    List,
}

impl ElementTag {
    pub const ALL: [ElementTag; 10] = [
        ElementTag::Text,
        ElementTag::Image,
        ElementTag::Code,
        ElementTag::Header,
        ElementTag::Detail,
        ElementTag::Quote,
        ElementTag::Video,
        ElementTag::Audio,
        ElementTag::Table,
        ElementTag::List,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ElementTag::Text => "text",
            ElementTag::Image => "image",
            ElementTag::Code => "code",
            ElementTag::Header => "header",
            ElementTag::Detail => "detail",
            ElementTag::Quote => "quote",
            ElementTag::Video => "video",
            ElementTag::Audio => "audio",
            ElementTag::Table => "table",
            ElementTag::List => "list",
        }
    }

    /// Media elements carry no text payload.
    pub fn is_media(self) -> bool {
        matches!(self, ElementTag::Image | ElementTag::Video | ElementTag::Audio)
    }
}

impl fmt::Display for ElementTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ElementTag {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ElementTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| FormatError::UnknownTag(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ImageStatus {
    Pending,
    Fetched,
    Failed,
    Dropped(String),
}

impl fmt::Display for ImageStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageStatus::Pending => f.write_str("pending"),
            ImageStatus::Fetched => f.write_str("fetched"),
            ImageStatus::Failed => f.write_str("failed"),
            ImageStatus::Dropped(reason) => write!(f, "dropped:{reason}"),
        }
    }
}

impl FromStr for ImageStatus {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(ImageStatus::Pending),
            "fetched" => Ok(ImageStatus::Fetched),
            "failed" => Ok(ImageStatus::Failed),
            _ => match s.strip_prefix("dropped:") {
                Some(reason) if !reason.is_empty() => Ok(ImageStatus::Dropped(reason.to_string())),
                _ => Err(FormatError::UnknownStatus(s.to_string())),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRef {
    pub url: String,
    /// Pixels; 0 means unknown.
    pub width: u32,
    pub height: u32,
    /// In `[0, 10]`, or [`UNSCORED`].
    pub aesthetic: f64,
    /// In `[0, 1]`, or [`UNSCORED`].
    pub nsfw: f64,
    pub phash: Option<u64>,
    pub dhash: Option<u64>,
    pub status: ImageStatus,
    /// Alt text captured at extraction time, if the page had one.
    pub alt: Option<String>,
}

impl ImageRef {
    pub fn pending(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            width: 0,
            height: 0,
            aesthetic: UNSCORED,
            nsfw: UNSCORED,
            phash: None,
            dhash: None,
            status: ImageStatus::Pending,
            alt: None,
        }
    }

    /// Text standing in for the image when pairing by similarity: the alt
    /// text if present, else the final URL path segment with separators
    /// turned into spaces.
    pub fn surrogate_text(&self) -> String {
        if let Some(alt) = self.alt.as_deref().map(str::trim).filter(|a| !a.is_empty()) {
            return alt.to_string();
        }
        let path = match url::Url::parse(&self.url) {
            Ok(u) => u.path().to_string(),
            Err(_) => self.url.clone(),
        };
        let segment = path.rsplit('/').find(|s| !s.is_empty()).unwrap_or("");
        let segment = percent_decode(segment);
        let spaced: String = segment
            .chars()
            .map(|c| if matches!(c, '-' | '_' | '.' | '+' | '~') { ' ' } else { c })
            .collect();
        crate::text::collapse_whitespace(&spaced)
    }
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            let hex = std::str::from_utf8(&bytes[i + 1..i + 3]).ok();
            if let Some(v) = hex.and_then(|h| u8::from_str_radix(h, 16).ok()) {
                out.push(v);
                i += 3;
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub tag: ElementTag,
    /// Empty for images.
    pub content: String,
    pub image: Option<ImageRef>,
}

impl Element {
    pub fn new(tag: ElementTag, content: impl Into<String>) -> Self {
        Self { tag, content: content.into(), image: None }
    }

    pub fn text(content: impl Into<String>) -> Self {
        Self::new(ElementTag::Text, content)
    }

    pub fn image(image: ImageRef) -> Self {
        Self { tag: ElementTag::Image, content: String::new(), image: Some(image) }
    }

    pub fn is_image(&self) -> bool {
        self.tag == ElementTag::Image
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentMeta {
    pub nsfw_text: f64,
    pub political: f64,
    pub toxic: f64,
    pub advertisement: f64,
    pub fluency: f64,
    pub language: String,
    pub timestamp: DateTime<Utc>,
    pub source_url: String,
}

impl DocumentMeta {
    pub fn unscored(source_url: impl Into<String>, timestamp: DateTime<Utc>) -> Self {
        Self {
            nsfw_text: UNSCORED,
            political: UNSCORED,
            toxic: UNSCORED,
            advertisement: UNSCORED,
            fluency: UNSCORED,
            language: "en".to_string(),
            timestamp,
            source_url: source_url.into(),
        }
    }

    /// Named access for config-driven rules.
    pub fn score(&self, field: &str) -> Option<f64> {
        match field {
            "nsfw_text" => Some(self.nsfw_text),
            "political" => Some(self.political),
            "toxic" => Some(self.toxic),
            "advertisement" => Some(self.advertisement),
            "fluency" => Some(self.fluency),
            _ => None,
        }
    }

    pub const SCORE_FIELDS: [&'static str; 5] =
        ["nsfw_text", "political", "toxic", "advertisement", "fluency"];
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamDocument {
    pub id: String,
    pub elements: Vec<Element>,
    pub meta: DocumentMeta,
}

impl StreamDocument {
    pub fn images(&self) -> impl Iterator<Item = &ImageRef> {
        self.elements.iter().filter_map(|e| e.image.as_ref())
    }

    pub fn image_count(&self) -> usize {
        self.elements.iter().filter(|e| e.is_image()).count()
    }

    pub fn text_count(&self) -> usize {
        self.elements.iter().filter(|e| !e.tag.is_media()).count()
    }
}

// ---------------------------------------------------------------------------
// Wire format

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireDocument {
    id: String,
    url: String,
    timestamp: String,
    language: String,
    elements: Vec<WireElement>,
    meta: WireMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireElement {
    tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<WireImage>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireImage {
    url: String,
    width: u32,
    height: u32,
    aesthetic: f64,
    nsfw: f64,
    phash: Option<String>,
    dhash: Option<String>,
    status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alt: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireMeta {
    nsfw_text: f64,
    political: f64,
    toxic: f64,
    advertisement: f64,
    fluency: f64,
}

fn hash_to_hex(h: Option<u64>) -> Option<String> {
    h.map(|v| format!("{v:016x}"))
}

fn hash_from_hex(s: Option<String>) -> Result<Option<u64>, FormatError> {
    match s {
        None => Ok(None),
        Some(s) if s.len() == 16 => {
            u64::from_str_radix(&s, 16).map(Some).map_err(|_| FormatError::InvalidHash(s))
        }
        Some(s) => Err(FormatError::InvalidHash(s)),
    }
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, FormatError> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| FormatError::InvalidTimestamp(s.to_string()))
}

impl From<&StreamDocument> for WireDocument {
    fn from(doc: &StreamDocument) -> Self {
        let elements = doc
            .elements
            .iter()
            .map(|e| WireElement {
                tag: e.tag.as_str().to_string(),
                content: if e.is_image() && e.content.is_empty() {
                    None
                } else {
                    Some(e.content.clone())
                },
                image: e.image.as_ref().map(|img| WireImage {
                    url: img.url.clone(),
                    width: img.width,
                    height: img.height,
                    aesthetic: img.aesthetic,
                    nsfw: img.nsfw,
                    phash: hash_to_hex(img.phash),
                    dhash: hash_to_hex(img.dhash),
                    status: img.status.to_string(),
                    alt: img.alt.clone(),
                }),
            })
            .collect();
        let m = &doc.meta;
        WireDocument {
            id: doc.id.clone(),
            url: m.source_url.clone(),
            timestamp: format_timestamp(&m.timestamp),
            language: m.language.clone(),
            elements,
            meta: WireMeta {
                nsfw_text: m.nsfw_text,
                political: m.political,
                toxic: m.toxic,
                advertisement: m.advertisement,
                fluency: m.fluency,
            },
        }
    }
}

impl TryFrom<WireDocument> for StreamDocument {
    type Error = FormatError;

    fn try_from(w: WireDocument) -> Result<Self, Self::Error> {
        let mut elements = Vec::with_capacity(w.elements.len());
        for e in w.elements {
            let tag: ElementTag = e.tag.parse()?;
            let image = match e.image {
                None => None,
                Some(i) => Some(ImageRef {
                    url: i.url,
                    width: i.width,
                    height: i.height,
                    aesthetic: i.aesthetic,
                    nsfw: i.nsfw,
                    phash: hash_from_hex(i.phash)?,
                    dhash: hash_from_hex(i.dhash)?,
                    status: i.status.parse()?,
                    alt: i.alt,
                }),
            };
            elements.push(Element { tag, content: e.content.unwrap_or_default(), image });
        }
        Ok(StreamDocument {
            id: w.id,
            elements,
            meta: DocumentMeta {
                nsfw_text: w.meta.nsfw_text,
                political: w.meta.political,
                toxic: w.meta.toxic,
                advertisement: w.meta.advertisement,
                fluency: w.meta.fluency,
                language: w.language,
                timestamp: parse_timestamp(&w.timestamp)?,
                source_url: w.url,
            },
        })
    }
}

fn has_nul(doc: &StreamDocument) -> bool {
    doc.id.contains('\0')
        || doc.meta.source_url.contains('\0')
        || doc.elements.iter().any(|e| {
            e.content.contains('\0')
                || e.image.as_ref().is_some_and(|i| {
                    i.url.contains('\0') || i.alt.as_deref().is_some_and(|a| a.contains('\0'))
                })
        })
}

/// Serialises one document to a single JSON line (no trailing newline).
pub fn serialize_document(doc: &StreamDocument) -> Result<String, FormatError> {
    if has_nul(doc) {
        return Err(FormatError::InteriorNul(doc.id.clone()));
    }
    Ok(serde_json::to_string(&WireDocument::from(doc))?)
}

pub fn parse_document(line: &str) -> Result<StreamDocument, FormatError> {
    let wire: WireDocument = serde_json::from_str(line)?;
    StreamDocument::try_from(wire)
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyId,
    /// `tag == image` without an image reference, or the reverse.
    ImageRefMismatch { index: usize },
    ImageHasContent { index: usize },
    ControlCharacter { index: usize },
    InvalidImageUrl { index: usize, url: String },
    ScoreOutOfRange { field: &'static str, index: Option<usize>, value: f64 },
    InvalidLanguage(String),
    NoImage,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// What stage the document is at; extraction output must carry an image.
#[derive(Debug, Clone, Copy, Default)]
pub struct ValidationContext {
    pub post_extraction: bool,
}

fn score_ok(v: f64, max: f64) -> bool {
    v == UNSCORED || (0.0..=max).contains(&v)
}

fn is_bcp47(tag: &str) -> bool {
    !tag.is_empty()
        && tag.split('-').all(|p| (1..=8).contains(&p.len()) && p.chars().all(|c| c.is_ascii_alphanumeric()))
        && tag.split('-').next().is_some_and(|p| p.chars().all(|c| c.is_ascii_alphabetic()))
}

pub fn validate_document(doc: &StreamDocument, ctx: ValidationContext) -> ValidationReport {
    let mut v = Vec::new();
    if doc.id.is_empty() {
        v.push(Violation::EmptyId);
    }
    for (index, e) in doc.elements.iter().enumerate() {
        if e.is_image() != e.image.is_some() {
            v.push(Violation::ImageRefMismatch { index });
        }
        if e.is_image() && !e.content.is_empty() {
            v.push(Violation::ImageHasContent { index });
        }
        if e.content.chars().any(|c| c.is_control() && c != '\n' && c != '\t') {
            v.push(Violation::ControlCharacter { index });
        }
        if let Some(img) = &e.image {
            let absolute = url::Url::parse(&img.url).map(|u| !u.cannot_be_a_base()).unwrap_or(false);
            if !absolute {
                v.push(Violation::InvalidImageUrl { index, url: img.url.clone() });
            }
            if !score_ok(img.aesthetic, 10.0) {
                v.push(Violation::ScoreOutOfRange {
                    field: "aesthetic",
                    index: Some(index),
                    value: img.aesthetic,
                });
            }
            if !score_ok(img.nsfw, 1.0) {
                v.push(Violation::ScoreOutOfRange { field: "nsfw", index: Some(index), value: img.nsfw });
            }
        }
    }
    for field in DocumentMeta::SCORE_FIELDS {
        let value = doc.meta.score(field).unwrap_or(UNSCORED);
        if !score_ok(value, 1.0) {
            v.push(Violation::ScoreOutOfRange { field, index: None, value });
        }
    }
    if !is_bcp47(&doc.meta.language) {
        v.push(Violation::InvalidLanguage(doc.meta.language.clone()));
    }
    if ctx.post_extraction && doc.image_count() == 0 {
        v.push(Violation::NoImage);
    }
    ValidationReport { violations: v }
}

// ---------------------------------------------------------------------------
// Degradation

/// Text content of every non-media element in order, one per line.
pub fn to_text_corpus(doc: &StreamDocument) -> String {
    let parts: Vec<&str> = doc
        .elements
        .iter()
        .filter(|e| !e.tag.is_media())
        .map(|e| e.content.as_str())
        .collect();
    parts.join("\n")
}

/// A similarity in `[0, 1]` between two texts.
pub trait TextSimilarity: Sync {
    fn similarity(&self, a: &str, b: &str) -> f64;
}

/// Jaccard overlap of lowercased whitespace tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenOverlap;

impl TextSimilarity for TokenOverlap {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        use std::collections::HashSet;
        let ta: HashSet<String> = a.split_whitespace().map(str::to_lowercase).collect();
        let tb: HashSet<String> = b.split_whitespace().map(str::to_lowercase).collect();
        let union = ta.union(&tb).count();
        if union == 0 {
            return 0.0;
        }
        ta.intersection(&tb).count() as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairingStrategy {
    Natural,
    Retrieval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTextPair {
    pub image: ImageRef,
    pub text: String,
    pub strategy: PairingStrategy,
    /// Present only for retrieval pairing.
    pub score: Option<f64>,
}

/// How images get their paired text.
pub enum Pairing<'a> {
    /// Nearest preceding text element, else nearest following.
    Natural,
    /// Highest-similarity text element against the image's surrogate text.
    Retrieval(&'a dyn TextSimilarity),
}

pub fn to_image_text_pairs(doc: &StreamDocument, pairing: Pairing<'_>) -> Vec<ImageTextPair> {
    let texts: Vec<(usize, &str)> = doc
        .elements
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.tag.is_media() && !e.content.trim().is_empty())
        .map(|(i, e)| (i, e.content.as_str()))
        .collect();
    if texts.is_empty() {
        return Vec::new();
    }
    let mut pairs = Vec::new();
    for (pos, e) in doc.elements.iter().enumerate() {
        let Some(image) = e.image.as_ref().filter(|_| e.is_image()) else { continue };
        match pairing {
            Pairing::Natural => {
                let preceding = texts.iter().rev().find(|(i, _)| *i < pos);
                let chosen = preceding.or_else(|| texts.iter().find(|(i, _)| *i > pos));
                if let Some((_, text)) = chosen {
                    pairs.push(ImageTextPair {
                        image: image.clone(),
                        text: text.to_string(),
                        strategy: PairingStrategy::Natural,
                        score: None,
                    });
                }
            }
            Pairing::Retrieval(scorer) => {
                let surrogate = image.surrogate_text();
                let mut best: Option<(f64, &str)> = None;
                for (_, text) in &texts {
                    let s = scorer.similarity(&surrogate, text).clamp(0.0, 1.0);
                    // strict > keeps the earliest element on ties
                    if best.is_none_or(|(b, _)| s > b) {
                        best = Some((s, text));
                    }
                }
                if let Some((score, text)) = best {
                    pairs.push(ImageTextPair {
                        image: image.clone(),
                        text: text.to_string(),
                        strategy: PairingStrategy::Retrieval,
                        score: Some(score),
                    });
                }
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2023, 5, 17, 8, 30, 0).unwrap()
    }

    fn doc(elements: Vec<Element>) -> StreamDocument {
        StreamDocument {
            id: "d1".into(),
            elements,
            meta: DocumentMeta::unscored("https://example.com/a", ts()),
        }
    }

    fn img(url: &str) -> Element {
        Element::image(ImageRef::pending(url))
    }

    #[test]
    fn golden_line() {
        let d = doc(vec![Element::text("a"), img("https://example.com/u.png")]);
        let line = serialize_document(&d).unwrap();
        assert_eq!(
            line,
            r#"{"id":"d1","url":"https://example.com/a","timestamp":"2023-05-17T08:30:00Z","language":"en","elements":[{"tag":"text","content":"a"},{"tag":"image","image":{"url":"https://example.com/u.png","width":0,"height":0,"aesthetic":-1.0,"nsfw":-1.0,"phash":null,"dhash":null,"status":"pending"}}],"meta":{"nsfw_text":-1.0,"political":-1.0,"toxic":-1.0,"advertisement":-1.0,"fluency":-1.0}}"#
        );
        assert!(!line.contains('\n'));
    }

    #[test]
    fn round_trip_three_elements() {
        let mut image = ImageRef::pending("https://example.com/x.jpg");
        image.phash = Some(u64::MAX);
        image.dhash = Some(7);
        image.status = ImageStatus::Dropped("aspect".into());
        image.alt = Some("a dog".into());
        let d = doc(vec![Element::new(ElementTag::Header, "T"), Element::image(image), Element::text("p\nq")]);
        let back = parse_document(&serialize_document(&d).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn unknown_tag_rejected() {
        let line = serialize_document(&doc(vec![Element::text("a")])).unwrap().replace("\"text\"", "\"banner\"");
        assert!(matches!(parse_document(&line), Err(FormatError::UnknownTag(t)) if t == "banner"));
    }

    #[test]
    fn unknown_field_rejected() {
        let line = serialize_document(&doc(vec![Element::text("a")])).unwrap().replacen("{\"id\"", "{\"extra\":1,\"id\"", 1);
        assert!(matches!(parse_document(&line), Err(FormatError::Json(_))));
    }

    #[test]
    fn nul_is_encoding_error() {
        let d = doc(vec![Element::text("a\0b")]);
        assert!(matches!(serialize_document(&d), Err(FormatError::InteriorNul(_))));
    }

    #[test]
    fn validation_cases() {
        let mut image = ImageRef::pending("https://example.com/x.jpg");
        image.aesthetic = 11.0;
        let bad = doc(vec![Element::text("a"), Element::image(image)]);
        let report = validate_document(&bad, ValidationContext::default());
        assert!(matches!(
            report.violations.as_slice(),
            [Violation::ScoreOutOfRange { field: "aesthetic", .. }]
        ));

        let no_img = doc(vec![Element::text("a")]);
        let report = validate_document(&no_img, ValidationContext { post_extraction: true });
        assert_eq!(report.violations, vec![Violation::NoImage]);
        assert!(validate_document(&no_img, ValidationContext::default()).is_valid());

        let good = doc(vec![Element::text("a"), img("https://example.com/u.png")]);
        assert!(validate_document(&good, ValidationContext { post_extraction: true }).is_valid());
    }

    #[test]
    fn validation_structure() {
        let mut d = doc(vec![Element::new(ElementTag::Image, ""), Element::text("bell\u{7}")]);
        d.elements.push(img("relative/path.png"));
        d.meta.language = "".into();
        let v = validate_document(&d, ValidationContext::default()).violations;
        assert!(v.contains(&Violation::ImageRefMismatch { index: 0 }));
        assert!(v.contains(&Violation::ControlCharacter { index: 1 }));
        assert!(v.iter().any(|x| matches!(x, Violation::InvalidImageUrl { index: 2, .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::InvalidLanguage(_))));
    }

    #[test]
    fn text_corpus() {
        let d = doc(vec![Element::text("a"), img("https://e.com/i.png"), Element::text("b")]);
        assert_eq!(to_text_corpus(&d), "a\nb");
        assert_eq!(to_text_corpus(&doc(vec![img("https://e.com/i.png")])), "");
        let d = doc(vec![Element::new(ElementTag::Header, "T"), Element::text("p")]);
        assert_eq!(to_text_corpus(&d), "T\np");
    }

    #[test]
    fn natural_pairing() {
        let d = doc(vec![Element::text("A"), img("https://e.com/i.png"), Element::text("B")]);
        let pairs = to_image_text_pairs(&d, Pairing::Natural);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].text, "A");
        assert_eq!(pairs[0].score, None);

        let d = doc(vec![img("https://e.com/i.png"), Element::text("B")]);
        assert_eq!(to_image_text_pairs(&d, Pairing::Natural)[0].text, "B");
    }

    #[test]
    fn retrieval_pairing_token_overlap() {
        // overlap("red car", "blue sky") = 0/4, overlap("red car", "a red car parked") = 2/4
        let d = doc(vec![
            Element::text("blue sky"),
            img("https://e.com/photos/red-car"),
            Element::text("a red car parked"),
        ]);
        assert_eq!(d.elements[1].image.as_ref().unwrap().surrogate_text(), "red car");
        let pairs = to_image_text_pairs(&d, Pairing::Retrieval(&TokenOverlap));
        assert_eq!(pairs[0].text, "a red car parked");
        assert_eq!(pairs[0].score, Some(0.5));
    }

    #[test]
    fn retrieval_without_text_is_empty() {
        let d = doc(vec![img("https://e.com/i.png")]);
        assert!(to_image_text_pairs(&d, Pairing::Retrieval(&TokenOverlap)).is_empty());
    }

    #[test]
    fn surrogate_prefers_alt() {
        let mut i = ImageRef::pending("https://e.com/a/IMG_0042.jpg");
        assert_eq!(i.surrogate_text(), "IMG 0042 jpg");
        i.alt = Some(" sunset ".into());
        assert_eq!(i.surrogate_text(), "sunset");
        let i = ImageRef::pending("https://e.com/a/red%20car.png?x=1");
        assert_eq!(i.surrogate_text(), "red car png");
    }
}
