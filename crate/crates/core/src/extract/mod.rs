//! Main-content extraction from HTML captures.
//!
//! The page is parsed into a [`DomNode`] tree, noise regions are pruned,
//! and the densest qualifying container is selected as the main body. Its
//! subtree is walked in document order and mapped onto stream elements.
//! Pages that end up without an image are dropped.

pub mod dom;
pub mod warc;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use regex::bytes::Regex as BytesRegex;
use thiserror::Error;
use url::Url;

use crate::stream_format::{format_timestamp, DocumentMeta, Element, ElementTag, ImageRef, StreamDocument};
use crate::text::collapse_whitespace;
pub use dom::{parse_html, score_node, DomChild, DomNode, NodeScore};
pub use warc::{ingest_warc, HtmlCapture, WarcError, WarcReader, WarcRecord};

const DEFAULT_AD_PATTERNS: &str = include_str!("../../data/ad_patterns.txt");

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("input is not decodable as HTML: {0}")]
    Decode(String),
    #[error("invalid page URL {0:?}")]
    InvalidUrl(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad sidecar {path}: {reason}")]
    Sidecar { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    NoImage,
    EmptyBody,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::NoImage => "no_image",
            DropReason::EmptyBody => "empty_body",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Extraction {
    Document(StreamDocument),
    Dropped(DropReason),
}

/// Path tokens that mark ad, tracking and sidebar images.
#[derive(Debug, Clone)]
pub struct AdPatterns {
    tokens: Vec<String>,
}

impl Default for AdPatterns {
    fn default() -> Self {
        Self::parse(DEFAULT_AD_PATTERNS)
    }
}

impl AdPatterns {
    /// One token per line; `#` starts a comment.
    pub fn parse(list: &str) -> Self {
        let tokens = list
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        Self { tokens }
    }

    /// True when any alphanumeric token of the lowercased URL path equals a
    /// pattern entry (`/img/ad-300x250.gif` matches `ad`, `/uploads/` does not).
    pub fn matches(&self, url: &str) -> bool {
        let path = match Url::parse(url) {
            Ok(u) => u.path().to_lowercase(),
            Err(_) => url.to_lowercase(),
        };
        path.split(|c: char| !c.is_alphanumeric()).any(|tok| self.tokens.iter().any(|p| p == tok))
    }
}

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    pub ad_patterns: AdPatterns,
    /// Charset from the transport layer, used when the page declares none.
    pub http_charset: Option<String>,
    /// Minimum non-whitespace characters for a main-content candidate.
    pub min_candidate_chars: usize,
    /// Winners shorter than this absorb dense siblings.
    pub merge_below_chars: usize,
    /// Candidates above this link ratio are ignored.
    pub max_link_ratio: f64,
    /// List and nav subtrees above this link ratio are removed as clusters.
    pub cluster_link_ratio: f64,
    /// Ancestors adding at most this fraction of extra text replace the winner.
    pub climb_slack: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            ad_patterns: AdPatterns::default(),
            http_charset: None,
            min_candidate_chars: 100,
            merge_below_chars: 200,
            max_link_ratio: 0.5,
            cluster_link_ratio: 0.8,
            climb_slack: 0.1,
        }
    }
}

static META_CHARSET: LazyLock<BytesRegex> = LazyLock::new(|| {
    BytesRegex::new(r#"(?i)<meta[^>]*?charset\s*=\s*["']?\s*([a-z0-9_:.\-]+)"#).unwrap()
});

/// Decodes page bytes: `<meta charset>` first, then the HTTP charset, then
/// UTF-8 with replacement characters.
pub fn decode_html(bytes: &[u8], http_charset: Option<&str>) -> Result<String, ExtractError> {
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(ExtractError::Decode("empty input".into()));
    }
    let head = &bytes[..bytes.len().min(4096)];
    if head.iter().filter(|b| **b == 0).count() > head.len() / 10 {
        return Err(ExtractError::Decode("binary content".into()));
    }
    let declared = META_CHARSET
        .captures(head)
        .and_then(|c| encoding_rs::Encoding::for_label(&c[1]))
        .or_else(|| http_charset.and_then(|c| encoding_rs::Encoding::for_label(c.as_bytes())));
    let encoding = declared.unwrap_or(encoding_rs::UTF_8);
    let (text, _, _) = encoding.decode(bytes);
    Ok(text.into_owned())
}

fn is_noise_tag(tag: &str) -> bool {
    matches!(
        tag,
        "nav" | "aside" | "footer" | "form" | "script" | "style" | "noscript" | "template" | "iframe" | "head"
    )
}

fn is_cluster_tag(tag: &str) -> bool {
    matches!(tag, "ul" | "ol" | "nav" | "menu" | "dl")
}

fn image_src(node: &DomNode) -> Option<&str> {
    ["src", "data-src", "data-original"]
        .into_iter()
        .filter_map(|a| node.attr(a))
        .map(str::trim)
        .find(|s| !s.is_empty() && !s.starts_with("data:"))
}

fn resolve(base: &Url, href: &str) -> Option<String> {
    let u = base.join(href).ok()?;
    matches!(u.scheme(), "http" | "https").then(|| u.to_string())
}

/// Removes noise regions in place: boilerplate tags, link-dense list
/// clusters and images whose URL matches an ad pattern.
fn prune(node: &mut DomNode, base: &Url, opts: &ExtractOptions) {
    node.children.retain_mut(|child| match child {
        DomChild::Text(_) => true,
        DomChild::Element(e) => {
            if is_noise_tag(&e.tag) {
                return false;
            }
            if e.tag == "img" {
                return match image_src(e).and_then(|s| resolve(base, s)) {
                    Some(u) => !opts.ad_patterns.matches(&u),
                    None => false,
                };
            }
            if is_cluster_tag(&e.tag) {
                let s = score_node(e);
                if s.text_chars > 0 && s.link_ratio() > opts.cluster_link_ratio {
                    return false;
                }
            }
            prune(e, base, opts);
            true
        }
    });
}

fn is_container(tag: &str) -> bool {
    matches!(tag, "body" | "main" | "article" | "section" | "div" | "td" | "center")
}

/// Picks the main-content subtrees, in document order.
fn select_main<'a>(body: &'a DomNode, opts: &ExtractOptions) -> Vec<&'a DomNode> {
    let scored = dom::score_tree(body);
    let qualifies = |i: usize| {
        let s = &scored[i].score;
        is_container(&scored[i].node.tag)
            && s.text_chars >= opts.min_candidate_chars
            && s.link_ratio() <= opts.max_link_ratio
    };
    let mut winner: Option<usize> = None;
    for i in 0..scored.len() {
        if qualifies(i) && winner.is_none_or(|w| scored[i].score.density > scored[w].score.density) {
            winner = Some(i);
        }
    }
    let Some(mut w) = winner else { return Vec::new() };

    // ancestors that only add markup or media around the same text
    while let Some(p) = scored[w].parent {
        let extra = scored[p].score.text_chars as f64 - scored[w].score.text_chars as f64;
        if qualifies(p) && extra <= opts.climb_slack * scored[w].score.text_chars as f64 {
            w = p;
        } else {
            break;
        }
    }

    if scored[w].score.text_chars >= opts.merge_below_chars {
        return vec![scored[w].node];
    }
    let Some(parent) = scored[w].parent else { return vec![scored[w].node] };
    let floor = scored[w].score.density / 2.0;
    scored
        .iter()
        .enumerate()
        .filter(|(i, s)| *i == w || (s.parent == Some(parent) && s.score.density >= floor))
        .map(|(_, s)| s.node)
        .collect()
}

/// Accumulates inline text and emits elements in document order.
struct Emitter<'a> {
    base: &'a Url,
    buffer: String,
    out: Vec<Element>,
}

fn clean_control(s: &str) -> String {
    s.chars().filter(|c| !c.is_control() || *c == '\n' || *c == '\t').collect()
}

fn clean_lines(s: &str) -> String {
    let lines: Vec<String> =
        s.split('\n').map(collapse_whitespace).filter(|l| !l.is_empty()).collect();
    clean_control(&lines.join("\n"))
}

fn preformatted(s: &str) -> String {
    let lines: Vec<&str> = s.split('\n').map(str::trim_end).collect();
    let start = lines.iter().position(|l| !l.trim().is_empty()).unwrap_or(lines.len());
    let end = lines.iter().rposition(|l| !l.trim().is_empty()).map_or(start, |e| e + 1);
    clean_control(&lines[start..end].join("\n"))
}

fn parse_dim(v: Option<&str>) -> u32 {
    v.map(|s| s.trim().trim_end_matches("px"))
        .and_then(|s| s.parse::<u32>().ok())
        .unwrap_or(0)
}

impl<'a> Emitter<'a> {
    fn flush(&mut self) {
        let text = clean_lines(&self.buffer);
        self.buffer.clear();
        if !text.is_empty() {
            self.out.push(Element::text(text));
        }
    }

    fn push_block(&mut self, tag: ElementTag, content: String) {
        self.flush();
        if !content.is_empty() {
            self.out.push(Element::new(tag, content));
        }
    }

    fn image(&mut self, node: &DomNode) {
        let Some(url) = image_src(node).and_then(|s| resolve(self.base, s)) else { return };
        self.flush();
        let mut image = ImageRef::pending(url);
        image.width = parse_dim(node.attr("width"));
        image.height = parse_dim(node.attr("height"));
        image.alt = node.attr("alt").map(collapse_whitespace).filter(|a| !a.is_empty());
        self.out.push(Element::image(image));
    }

    fn media(&mut self, tag: ElementTag, node: &DomNode) {
        let src = node.attr("src").or_else(|| node.find("source").and_then(|s| s.attr("src")));
        let content = src.and_then(|s| resolve(self.base, s)).unwrap_or_default();
        self.flush();
        self.out.push(Element::new(tag, content));
    }

    /// Images nested inside a captured block follow the block.
    fn trailing_images(&mut self, node: &DomNode) {
        for c in node.element_children() {
            if c.tag == "img" {
                self.image(c);
            } else {
                self.trailing_images(c);
            }
        }
    }

    fn walk(&mut self, node: &DomNode, parent_tag: &str) {
        let tag = node.tag.as_str();
        match tag {
            "h1" | "h2" | "h3" | "h4" | "h5" | "h6" => {
                self.push_block(ElementTag::Header, clean_lines(&node.text()));
                self.trailing_images(node);
            }
            "pre" => {
                self.push_block(ElementTag::Code, preformatted(&node.text()));
                self.trailing_images(node);
            }
            "code" if is_container(parent_tag) || parent_tag == "figure" => {
                self.push_block(ElementTag::Code, preformatted(&node.text()));
            }
            "blockquote" => {
                self.push_block(ElementTag::Quote, clean_lines(&node.text()));
                self.trailing_images(node);
            }
            "table" => {
                self.push_block(ElementTag::Table, table_text(node));
                self.trailing_images(node);
            }
            "ul" | "ol" => {
                self.push_block(ElementTag::List, list_text(node));
                self.trailing_images(node);
            }
            "details" | "summary" => {
                self.push_block(ElementTag::Detail, clean_lines(&node.text()));
                self.trailing_images(node);
            }
            "img" => self.image(node),
            "video" => self.media(ElementTag::Video, node),
            "audio" => self.media(ElementTag::Audio, node),
            "br" => self.buffer.push('\n'),
            _ if dom::is_invisible(tag) => {}
            _ => {
                let block = dom::is_block(tag);
                if block {
                    self.flush();
                }
                for c in &node.children {
                    match c {
                        DomChild::Text(t) => self.buffer.push_str(t),
                        DomChild::Element(e) => self.walk(e, tag),
                    }
                }
                if block {
                    self.flush();
                }
            }
        }
    }
}

fn list_text(node: &DomNode) -> String {
    let items: Vec<String> = node
        .element_children()
        .filter(|c| c.tag == "li")
        .map(|li| collapse_whitespace(&li.text()))
        .filter(|t| !t.is_empty())
        .map(|t| format!("- {t}"))
        .collect();
    clean_control(&items.join("\n"))
}

fn collect_rows<'a>(node: &'a DomNode, rows: &mut Vec<&'a DomNode>) {
    for c in node.element_children() {
        match c.tag.as_str() {
            "tr" => rows.push(c),
            "table" => {}
            _ => collect_rows(c, rows),
        }
    }
}

fn table_text(node: &DomNode) -> String {
    let mut rows = Vec::new();
    collect_rows(node, &mut rows);
    let lines: Vec<String> = rows
        .into_iter()
        .map(|tr| {
            tr.element_children()
                .filter(|c| c.tag == "td" || c.tag == "th")
                .map(|c| collapse_whitespace(&c.text()))
                .collect::<Vec<_>>()
                .join(" | ")
        })
        .filter(|l| !l.replace('|', "").trim().is_empty())
        .collect();
    clean_control(&lines.join("\n"))
}

/// Stable document id: hex of a 64-bit hash over URL and timestamp.
pub fn document_id(url: &str, timestamp: &DateTime<Utc>) -> String {
    let key = format!("{url}\n{}", format_timestamp(timestamp));
    format!("{:016x}", xxhash_rust::xxh3::xxh3_64(key.as_bytes()))
}

fn page_language(root: &DomNode) -> String {
    root.attr("lang")
        .map(|l| l.trim().replace('_', "-"))
        .filter(|l| {
            !l.is_empty()
                && l.split('-').all(|p| (1..=8).contains(&p.len()) && p.chars().all(|c| c.is_ascii_alphanumeric()))
        })
        .unwrap_or_else(|| "und".to_string())
}

pub fn extract_document(
    html: &[u8],
    url: &str,
    timestamp: DateTime<Utc>,
    opts: &ExtractOptions,
) -> Result<Extraction, ExtractError> {
    let base = Url::parse(url).map_err(|_| ExtractError::InvalidUrl(url.to_string()))?;
    let source = decode_html(html, opts.http_charset.as_deref())?;
    let mut root = parse_html(&source);
    let language = page_language(&root);
    let base = root
        .find("base")
        .and_then(|b| b.attr("href"))
        .and_then(|h| base.join(h).ok())
        .unwrap_or(base);
    prune(&mut root, &base, opts);
    let body = root.find("body").unwrap_or(&root);

    let mut emitter = Emitter { base: &base, buffer: String::new(), out: Vec::new() };
    for node in select_main(body, opts) {
        emitter.walk(node, "body");
        emitter.flush();
    }
    let elements = emitter.out;
    if !elements.iter().any(|e| !e.tag.is_media()) {
        return Ok(Extraction::Dropped(DropReason::EmptyBody));
    }
    if !elements.iter().any(Element::is_image) {
        return Ok(Extraction::Dropped(DropReason::NoImage));
    }
    let mut meta = DocumentMeta::unscored(url, timestamp);
    meta.language = language;
    Ok(Extraction::Document(StreamDocument { id: document_id(url, &timestamp), elements, meta }))
}

/// Convenience wrapper for a WARC capture.
pub fn extract_capture(cap: &HtmlCapture, opts: &ExtractOptions) -> Result<Extraction, ExtractError> {
    let opts = ExtractOptions { http_charset: cap.http_charset.clone(), ..opts.clone() };
    extract_document(&cap.html, &cap.url, cap.timestamp, &opts)
}

/// Reads `*.html` pages with `.meta` sidecars from a directory, sorted by
/// file name. A sidecar holds the page URL on its first non-empty line and
/// an RFC 3339 timestamp on the second.
pub fn read_html_dir(dir: &Path) -> Result<Vec<HtmlCapture>, ExtractError> {
    fn io(path: &Path) -> impl Fn(std::io::Error) -> ExtractError + '_ {
        move |source| ExtractError::Io { path: path.to_path_buf(), source }
    }
    let mut pages: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "html" || x == "htm"))
        .collect();
    pages.sort();
    let mut out = Vec::with_capacity(pages.len());
    for page in pages {
        let meta_path = page.with_extension("meta");
        let meta = fs::read_to_string(&meta_path).map_err(io(&meta_path))?;
        let mut lines = meta.lines().map(str::trim).filter(|l| !l.is_empty());
        let sidecar = |reason: &str| ExtractError::Sidecar { path: meta_path.clone(), reason: reason.into() };
        let url = lines.next().ok_or_else(|| sidecar("missing url line"))?.to_string();
        let ts = lines.next().ok_or_else(|| sidecar("missing timestamp line"))?;
        let timestamp = DateTime::parse_from_rfc3339(ts)
            .map_err(|_| sidecar("timestamp is not RFC 3339"))?
            .with_timezone(&Utc);
        let html = fs::read(&page).map_err(io(&page))?;
        out.push(HtmlCapture { url, timestamp, html, http_charset: None });
    }
    Ok(out)
}
