//! Owned DOM tree and subtree density scores.

use std::collections::BTreeMap;

use ego_tree::NodeRef;
use scraper::{Html, Node};

/// Nesting beyond this depth is discarded during conversion.
const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub enum DomChild {
    Element(DomNode),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomNode {
    /// Lowercase tag name.
    pub tag: String,
    pub attrs: BTreeMap<String, String>,
    pub children: Vec<DomChild>,
}

impl DomNode {
    pub fn new(tag: &str) -> Self {
        Self { tag: tag.to_ascii_lowercase(), attrs: BTreeMap::new(), children: Vec::new() }
    }

    pub fn with_text(mut self, text: &str) -> Self {
        self.children.push(DomChild::Text(text.to_string()));
        self
    }

    pub fn with_child(mut self, child: DomNode) -> Self {
        self.children.push(DomChild::Element(child));
        self
    }

    pub fn with_attr(mut self, name: &str, value: &str) -> Self {
        self.attrs.insert(name.to_string(), value.to_string());
        self
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.get(name).map(String::as_str)
    }

    pub fn element_children(&self) -> impl Iterator<Item = &DomNode> {
        self.children.iter().filter_map(|c| match c {
            DomChild::Element(e) => Some(e),
            DomChild::Text(_) => None,
        })
    }

    /// First descendant-or-self element with the given tag, in pre-order.
    pub fn find(&self, tag: &str) -> Option<&DomNode> {
        if self.tag == tag {
            return Some(self);
        }
        self.element_children().find_map(|c| c.find(tag))
    }

    /// Concatenated text of the subtree, skipping script and style.
    pub fn text(&self) -> String {
        let mut out = String::new();
        self.push_text(&mut out);
        out
    }

    fn push_text(&self, out: &mut String) {
        if is_invisible(&self.tag) {
            return;
        }
        if self.tag == "br" {
            out.push('\n');
        }
        for c in &self.children {
            match c {
                DomChild::Text(t) => out.push_str(t),
                DomChild::Element(e) => {
                    e.push_text(out);
                    if is_block(&e.tag) {
                        out.push(' ');
                    }
                }
            }
        }
    }
}

pub(crate) fn is_invisible(tag: &str) -> bool {
    matches!(tag, "script" | "style" | "noscript" | "template")
}

/// Tags that break the inline text flow.
pub(crate) fn is_block(tag: &str) -> bool {
    !matches!(
        tag,
        "a" | "abbr"
            | "b"
            | "bdi"
            | "bdo"
            | "big"
            | "cite"
            | "code"
            | "data"
            | "del"
            | "dfn"
            | "em"
            | "font"
            | "i"
            | "ins"
            | "kbd"
            | "label"
            | "mark"
            | "nobr"
            | "q"
            | "s"
            | "samp"
            | "small"
            | "span"
            | "strike"
            | "strong"
            | "sub"
            | "sup"
            | "time"
            | "tt"
            | "u"
            | "var"
            | "wbr"
            | "br"
            | "img"
    )
}

/// Parses a full HTML document and returns its `<html>` element.
/// Comments, doctypes and processing instructions are dropped.
pub fn parse_html(source: &str) -> DomNode {
    let html = Html::parse_document(source);
    let root = html.root_element();
    convert(*root, 0).unwrap_or_else(|| DomNode::new("html"))
}

fn convert(node: NodeRef<'_, Node>, depth: usize) -> Option<DomNode> {
    let Node::Element(el) = node.value() else { return None };
    let mut out = DomNode::new(el.name());
    for (k, v) in el.attrs() {
        out.attrs.entry(k.to_ascii_lowercase()).or_insert_with(|| v.to_string());
    }
    if depth >= MAX_DEPTH {
        return Some(out);
    }
    for child in node.children() {
        match child.value() {
            Node::Text(t) => {
                let s: &str = t;
                match out.children.last_mut() {
                    Some(DomChild::Text(prev)) => prev.push_str(s),
                    _ => out.children.push(DomChild::Text(s.to_string())),
                }
            }
            Node::Element(_) => {
                if let Some(e) = convert(child, depth + 1) {
                    out.children.push(DomChild::Element(e));
                }
            }
            _ => {}
        }
    }
    Some(out)
}

/// Subtree statistics used to locate the main content.
///
/// Character counts are non-whitespace characters; `descendant_tags`
/// excludes the node itself. Script and style subtrees contribute nothing.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeScore {
    pub text_chars: usize,
    pub descendant_tags: usize,
    pub link_chars: usize,
    /// `text_chars / (1 + descendant_tags)`
    pub density: f64,
}

impl NodeScore {
    pub fn link_ratio(&self) -> f64 {
        if self.text_chars == 0 {
            0.0
        } else {
            self.link_chars as f64 / self.text_chars as f64
        }
    }
}

fn visible_chars(s: &str) -> usize {
    s.chars().filter(|c| !c.is_whitespace()).count()
}

pub fn score_node(node: &DomNode) -> NodeScore {
    let (text, tags, links) = raw_counts(node, node.tag == "a");
    NodeScore {
        text_chars: text,
        descendant_tags: tags,
        link_chars: links,
        density: text as f64 / (1 + tags) as f64,
    }
}

fn raw_counts(node: &DomNode, in_link: bool) -> (usize, usize, usize) {
    let (mut text, mut tags, mut links) = (0, 0, 0);
    for c in &node.children {
        match c {
            DomChild::Text(t) => {
                let n = visible_chars(t);
                text += n;
                if in_link {
                    links += n;
                }
            }
            DomChild::Element(e) if is_invisible(&e.tag) => {}
            DomChild::Element(e) => {
                let (t, g, l) = raw_counts(e, in_link || e.tag == "a");
                text += t;
                tags += g + 1;
                links += l;
            }
        }
    }
    (text, tags, links)
}

/// Pre-order listing of every element with its score and parent index.
pub(crate) struct ScoredNode<'a> {
    pub node: &'a DomNode,
    pub score: NodeScore,
    pub parent: Option<usize>,
}

pub(crate) fn score_tree(root: &DomNode) -> Vec<ScoredNode<'_>> {
    let mut out = Vec::new();
    walk_scores(root, None, &mut out);
    out
}

fn walk_scores<'a>(node: &'a DomNode, parent: Option<usize>, out: &mut Vec<ScoredNode<'a>>) -> NodeScore {
    let idx = out.len();
    out.push(ScoredNode { node, score: NodeScore::default(), parent });
    let (mut text, mut tags, mut links) = (0, 0, 0);
    for c in &node.children {
        match c {
            DomChild::Text(t) => text += visible_chars(t),
            DomChild::Element(e) if is_invisible(&e.tag) => {}
            DomChild::Element(e) => {
                let s = walk_scores(e, Some(idx), out);
                text += s.text_chars;
                tags += s.descendant_tags + 1;
                links += s.link_chars;
            }
        }
    }
    if node.tag == "a" {
        links = text;
    }
    let score = NodeScore {
        text_chars: text,
        descendant_tags: tags,
        link_chars: links,
        density: text as f64 / (1 + tags) as f64,
    };
    out[idx].score = score;
    score
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paragraph_score() {
        let p = DomNode::new("p").with_text("abcde");
        let s = score_node(&p);
        assert_eq!((s.text_chars, s.descendant_tags, s.link_chars), (5, 0, 0));
        assert_eq!(s.density, 5.0);
    }

    #[test]
    fn link_chars_counted() {
        let mut ul = DomNode::new("ul");
        for _ in 0..10 {
            ul = ul.with_child(DomNode::new("li").with_child(DomNode::new("a").with_text("0123456789")));
        }
        let s = score_node(&ul);
        assert_eq!(s.text_chars, 100);
        assert_eq!(s.link_chars, 100);
        assert_eq!(s.descendant_tags, 20);
    }

    #[test]
    fn empty_div() {
        let s = score_node(&DomNode::new("div"));
        assert_eq!(s.density, 0.0);
        assert_eq!(s.text_chars, 0);
    }

    #[test]
    fn script_and_style_excluded() {
        let div = DomNode::new("div")
            .with_text("ab")
            .with_child(DomNode::new("script").with_text("var x = 1;"))
            .with_child(DomNode::new("style").with_text("p{}"));
        let s = score_node(&div);
        assert_eq!(s.text_chars, 2);
        assert_eq!(s.descendant_tags, 0);
    }

    #[test]
    fn tree_scores_match_single_node_scores() {
        let html = parse_html(
            "<html><body><div><p>hello <a href=x>world</a></p><ul><li><a>x</a></li></ul></div></body></html>",
        );
        for s in score_tree(&html) {
            assert_eq!(s.score, score_node(s.node), "tag {}", s.node.tag);
        }
    }

    #[test]
    fn comments_dropped() {
        let html = parse_html("<html><body><p>a<!-- SECRET -->b</p></body></html>");
        assert!(!html.text().contains("SECRET"));
        assert!(html.text().contains("ab"));
    }
}
