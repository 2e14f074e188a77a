//! Near-duplicate documents by MinHash and LSH banding, and image
//! occurrence counting by perceptual-hash identity.
//!
//! The hash family is frozen so signatures stay comparable across releases:
//!
//! ```text
//! base(s)   = xxh3_64_with_seed(utf8(s), seed)
//! key_i     = splitmix64(seed + (i + 1) * 0x9E3779B97F4A7C15)
//! hash_i(s) = splitmix64(base(s) ^ key_i)
//! ```
//!
//! all arithmetic wrapping on u64.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;
use xxhash_rust::xxh3::{xxh3_64, xxh3_64_with_seed};

use crate::stream_format::{to_text_corpus, ImageStatus, StreamDocument};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error, PartialEq)]
pub enum DedupError {
    #[error("document has no words to shingle")]
    EmptyDocument,
    #[error("signature parameters differ: {0:?} vs {1:?}")]
    ParamMismatch((usize, usize, u64), (usize, usize, u64)),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `w`-word windows of the lowercased, whitespace-normalised text; the
/// whole text when it has fewer than `w` words.
pub fn shingles(text: &str, w: usize) -> Vec<String> {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    if words.is_empty() {
        return Vec::new();
    }
    if words.len() < w {
        return vec![words.join(" ")];
    }
    words.windows(w).map(|win| win.join(" ")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub k: usize,
    pub w: usize,
    pub seed: u64,
    pub values: Vec<u64>,
}

impl MinHashSignature {
    /// Signature of an explicit shingle set; `w` is recorded only for
    /// compatibility checks.
    pub fn from_shingles<'a, I>(shingles: I, k: usize, w: usize, seed: u64) -> Result<Self, DedupError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if k < 16 || w == 0 {
            return Err(DedupError::InvalidParams(format!("need k >= 16 and w >= 1, got k={k}, w={w}")));
        }
        let keys: Vec<u64> = (0..k as u64).map(|i| splitmix64(seed.wrapping_add((i + 1).wrapping_mul(GOLDEN)))).collect();
        let mut values = vec![u64::MAX; k];
        let mut any = false;
        for s in shingles {
            any = true;
            let base = xxh3_64_with_seed(s.as_bytes(), seed);
            for (v, key) in values.iter_mut().zip(&keys) {
                *v = (*v).min(splitmix64(base ^ key));
            }
        }
        if !any {
            return Err(DedupError::EmptyDocument);
        }
        Ok(Self { k, w, seed, values })
    }

    fn params(&self) -> (usize, usize, u64) {
        (self.k, self.w, self.seed)
    }
}

pub fn minhash_signature(text: &str, k: usize, w: usize, seed: u64) -> Result<MinHashSignature, DedupError> {
    if w == 0 {
        return Err(DedupError::InvalidParams("w must be at least 1".into()));
    }
    let sh = shingles(text, w);
    MinHashSignature::from_shingles(sh.iter().map(String::as_str), k, w, seed)
}

pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, DedupError> {
    if a.params() != b.params() || a.values.len() != b.values.len() {
        return Err(DedupError::ParamMismatch(a.params(), b.params()));
    }
    let agree = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    Ok(agree as f64 / a.k as f64)
}

/// Band buckets over signatures. Build it single-threaded, or build one
/// per worker and [`merge`](SignatureIndex::merge) them.
#[derive(Debug, Clone)]
pub struct SignatureIndex {
    pub bands: usize,
    pub rows: usize,
    buckets: HashMap<(usize, u64), Vec<String>>,
}

impl SignatureIndex {
    pub fn new(bands: usize, rows: usize) -> Self {
        Self { bands, rows, buckets: HashMap::new() }
    }

    fn band_keys<'a>(&'a self, sig: &'a MinHashSignature) -> impl Iterator<Item = (usize, u64)> + 'a {
        sig.values.chunks(self.rows).take(self.bands).enumerate().map(|(b, chunk)| {
            let bytes: Vec<u8> = chunk.iter().flat_map(|v| v.to_le_bytes()).collect();
            (b, xxh3_64(&bytes))
        })
    }

    pub fn insert(&mut self, id: &str, sig: &MinHashSignature) -> Result<(), DedupError> {
        if self.bands * self.rows != sig.k {
            return Err(DedupError::InvalidParams(format!(
                "bands {} x rows {} does not equal k {}",
                self.bands, self.rows, sig.k
            )));
        }
        let keys: Vec<_> = self.band_keys(sig).collect();
        for key in keys {
            self.buckets.entry(key).or_default().push(id.to_string());
        }
        Ok(())
    }

    pub fn merge(&mut self, other: SignatureIndex) {
        for (key, ids) in other.buckets {
            self.buckets.entry(key).or_default().extend(ids);
        }
    }

    /// Every unordered pair sharing at least one bucket, as (smaller, larger).
    pub fn candidate_pairs(&self) -> BTreeSet<(String, String)> {
        let mut pairs = BTreeSet::new();
        for ids in self.buckets.values() {
            for (i, a) in ids.iter().enumerate() {
                for b in &ids[i + 1..] {
                    if a != b {
                        let p = if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
                        pairs.insert(p);
                    }
                }
            }
        }
        pairs
    }

    /// Number of buckets holding `id`.
    pub fn bucket_count(&self, id: &str) -> usize {
        self.buckets.values().map(|ids| ids.iter().filter(|x| *x == id).count()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupConfig {
    pub threshold: f64,
    pub k: usize,
    pub shingle_width: usize,
    pub bands: usize,
    pub rows: usize,
    pub seed: u64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self { threshold: 0.8, k: 256, shingle_width: 5, bands: 32, rows: 8, seed: 0 }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<(), DedupError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(DedupError::InvalidParams(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.k < 16 || self.shingle_width == 0 || self.bands * self.rows != self.k {
            return Err(DedupError::InvalidParams(format!(
                "need k >= 16, shingle_width >= 1 and bands * rows = k (k={}, w={}, {}x{})",
                self.k, self.shingle_width, self.bands, self.rows
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DuplicateGroup {
    pub component_id: usize,
    pub member_ids: Vec<String>,
    pub survivor_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DedupReport {
    /// Components with at least two members, ordered by sorted member ids.
    pub groups: Vec<DuplicateGroup>,
}

impl DedupReport {
    pub fn removed(&self) -> usize {
        self.groups.iter().map(|g| g.member_ids.len() - 1).sum()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for g in &self.groups {
            out.push_str(&serde_json::to_string(g).expect("group serialises"));
            out.push('\n');
        }
        out
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

pub fn signatures(docs: &[StreamDocument], cfg: &DedupConfig) -> Vec<Option<MinHashSignature>> {
    use rayon::prelude::*;
    docs.par_iter()
        .map(|d| minhash_signature(&to_text_corpus(d), cfg.k, cfg.shingle_width, cfg.seed).ok())
        .collect()
}

/// Verified near-duplicate edges (index pairs, ascending) found through the
/// band index.
pub fn duplicate_edges(sigs: &[Option<MinHashSignature>], cfg: &DedupConfig) -> Vec<(usize, usize)> {
    // keyed by position so repeated ids stay distinct
    let mut index = SignatureIndex::new(cfg.bands, cfg.rows);
    for (i, sig) in sigs.iter().enumerate() {
        if let Some(s) = sig {
            index.insert(&i.to_string(), s).expect("config validated");
        }
    }
    let mut edges = Vec::new();
    for (a, b) in index.candidate_pairs() {
        let (ia, ib): (usize, usize) = (a.parse().expect("position key"), b.parse().expect("position key"));
        let (Some(sa), Some(sb)) = (&sigs[ia], &sigs[ib]) else { continue };
        if estimate_jaccard(sa, sb).expect("same params") >= cfg.threshold {
            edges.push((ia.min(ib), ia.max(ib)));
        }
    }
    edges.sort_unstable();
    edges
}

/// Keep flags, one per document: per near-duplicate component only the
/// latest timestamp survives, ties to the lexicographically greatest id.
/// Documents without words cannot be compared and always survive.
pub fn dedup_mask(docs: &[StreamDocument], cfg: &DedupConfig) -> Result<(Vec<bool>, DedupReport), DedupError> {
    cfg.validate()?;
    let sigs = signatures(docs, cfg);
    let mut uf = UnionFind::new(docs.len());
    for (a, b) in duplicate_edges(&sigs, cfg) {
        uf.union(a, b);
    }
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..docs.len() {
        let root = uf.find(i);
        components.entry(root).or_default().push(i);
    }
    let mut keep = vec![true; docs.len()];
    let mut groups = Vec::new();
    for members in components.values().filter(|m| m.len() > 1) {
        let survivor = *members
            .iter()
            .max_by(|&&a, &&b| (docs[a].meta.timestamp, &docs[a].id, b).cmp(&(docs[b].meta.timestamp, &docs[b].id, a)))
            .expect("non-empty component");
        for &m in members {
            keep[m] = m == survivor;
        }
        let mut member_ids: Vec<String> = members.iter().map(|&m| docs[m].id.clone()).collect();
        member_ids.sort();
        groups.push(DuplicateGroup { component_id: 0, member_ids, survivor_id: docs[survivor].id.clone() });
    }
    groups.sort_by(|a, b| a.member_ids.cmp(&b.member_ids));
    for (i, g) in groups.iter_mut().enumerate() {
        g.component_id = i;
    }
    Ok((keep, DedupReport { groups }))
}

/// [`dedup_mask`] applied: survivors in input order plus the group report.
pub fn dedup_corpus(docs: Vec<StreamDocument>, cfg: &DedupConfig) -> Result<(Vec<StreamDocument>, DedupReport), DedupError> {
    let (keep, report) = dedup_mask(&docs, cfg)?;
    let survivors = docs.into_iter().zip(keep).filter_map(|(d, k)| k.then_some(d)).collect();
    Ok((survivors, report))
}

pub type ImageKey = (u64, u64);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OccurrenceTable {
    entries: BTreeMap<ImageKey, Vec<String>>,
}

impl OccurrenceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, key: ImageKey, doc_id: &str) {
        self.entries.entry(key).or_default().push(doc_id.to_string());
    }

    /// One occurrence per fetched image element carrying both hashes.
    pub fn from_documents(docs: &[StreamDocument]) -> Self {
        let mut t = Self::new();
        for d in docs {
            for img in d.images() {
                if let (ImageStatus::Fetched, Some(p), Some(h)) = (&img.status, img.phash, img.dhash) {
                    t.add((p, h), &d.id);
                }
            }
        }
        t
    }

    pub fn merge(&mut self, other: OccurrenceTable) {
        for (k, ids) in other.entries {
            self.entries.entry(k).or_default().extend(ids);
        }
    }

    pub fn count(&self, key: ImageKey) -> usize {
        self.entries.get(&key).map_or(0, Vec::len)
    }

    pub fn doc_ids(&self, key: ImageKey) -> &[String] {
        self.entries.get(&key).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Keys seen strictly more than `limit` times.
pub fn image_occurrence_filter(table: &OccurrenceTable, limit: usize) -> BTreeSet<ImageKey> {
    table.entries.iter().filter(|(_, ids)| ids.len() > limit).map(|(k, _)| *k).collect()
}

pub const OCCURRENCE_REASON: &str = "occurrence";

/// Marks fetched images whose key is in `removed` as dropped; returns how
/// many were marked.
pub fn mark_frequent_images(docs: &mut [StreamDocument], removed: &BTreeSet<ImageKey>) -> usize {
    let mut marked = 0;
    let wanted: HashSet<ImageKey> = removed.iter().copied().collect();
    for d in docs {
        for el in &mut d.elements {
            if let Some(img) = el.image.as_mut() {
                if let (ImageStatus::Fetched, Some(p), Some(h)) = (&img.status, img.phash, img.dhash) {
                    if wanted.contains(&(p, h)) {
                        img.status = ImageStatus::Dropped(OCCURRENCE_REASON.into());
                        marked += 1;
                    }
                }
            }
        }
    }
    marked
}
