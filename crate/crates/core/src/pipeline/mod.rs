//! Config-driven orchestration of the four filtering stages over JSONL.
//!
//! Preliminary filtering and dedup always delete. By default the image and
//! detailed stages only annotate: image references carry their fetch and
//! filter status, and `annotations.jsonl` records each document's verdicts.
//! With `hard_drop` they delete too.
//!
//! Members of a parallel group all see the node's full input. The report
//! still accounts for them one after another, in group order, so a document
//! rejected by several members is charged to the first.
//!
//! Everything written is a pure function of config and input: documents
//! travel with sequence numbers, outputs are sorted by id, and wall-clock
//! timings go to a separate `timings.json`.

pub mod config;
pub mod queue;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

pub use config::{ImagesConfig, PipelineConfig, RulesConfig, StageToggles};
pub use queue::{for_each_ordered, ordered_map};

use crate::dedup::{dedup_mask, image_occurrence_filter, mark_frequent_images, DedupReport, OccurrenceTable};
use crate::image_pipeline::{
    analyze_image, fetch_images, filter_image, BloomFilter, FetchFailure, FetchTask, FileTransport, ImageDecoder,
    ImageScorer, ImageVerdict, PgmDecoder, StubImageScorer, Transport, TransportError,
};
use crate::scheduler::{PipelinePlan, StageId};
use crate::stream_format::{parse_document, serialize_document, ImageRef, ImageStatus, StreamDocument};
use crate::text_filters::{apply_detailed_rules, preliminary_filter, Decision, RuleSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Fatal(String),
}

impl PipelineError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

pub fn stage_name(id: StageId) -> &'static str {
    match id {
        StageId::PreliminaryTextFilter => "preliminary",
        StageId::Dedup => "dedup",
        StageId::ImageDownloadFilter => "images",
        StageId::DetailedTextFilter => "detailed",
    }
}

/// Transport that knows no URLs; used when no image root is configured.
struct NullTransport;

impl Transport for NullTransport {
    fn request(&self, _url: &str) -> Result<crate::image_pipeline::fetch::Response, TransportError> {
        Err(TransportError::NotFound)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRow {
    pub stage: &'static str,
    pub symbol: String,
    /// `drop` or `annotate`.
    pub mode: &'static str,
    pub input: usize,
    pub flagged: usize,
    pub output: usize,
    pub removal_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ImageCounters {
    pub image_refs: usize,
    pub invalid_urls: usize,
    pub distinct_urls: usize,
    pub skipped_by_bloom: usize,
    pub requests: usize,
    /// Distinct URLs that fetched and decoded.
    pub fetched: usize,
    /// Distinct URLs whose fetch failed.
    pub failed: usize,
    pub decode_errors: usize,
    /// Image references by drop reason.
    pub dropped: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub plan: String,
    pub hard_drop: bool,
    pub input_lines: usize,
    pub malformed: usize,
    pub stages: Vec<StageRow>,
    pub rule_triggers: BTreeMap<String, usize>,
    pub images: ImageCounters,
    pub duplicate_groups: usize,
    pub output_documents: usize,
    pub rejected_documents: usize,
}

impl RunReport {
    pub fn stage(&self, name: &str) -> Option<&StageRow> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

/// A document a stage refused, with its reason code.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub reason: String,
    pub detail: Value,
}

#[derive(Default)]
struct StageResult {
    docs: Option<Vec<StreamDocument>>,
    drops: Vec<Option<Rejection>>,
    notes: Vec<Value>,
    triggers: BTreeMap<String, usize>,
    images: Option<ImageCounters>,
    dedup: Option<DedupReport>,
}

/// Everything one run produces, before it is written.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub documents: Vec<StreamDocument>,
    /// Stage name to `(doc id, JSON line)`, sorted by id.
    pub rejects: BTreeMap<&'static str, Vec<(String, String)>>,
    pub malformed: Vec<String>,
    pub annotations: Vec<String>,
    pub duplicate_groups: String,
    pub report: RunReport,
    pub timings: BTreeMap<String, f64>,
}

/// Parses JSONL text into documents, quarantine records
/// (`{"line", "error", "raw"}`) and the count of non-blank lines.
pub fn parse_jsonl(input: &str, workers: usize, capacity: usize) -> (Vec<StreamDocument>, Vec<String>, usize) {
    let lines: Vec<(usize, &str)> =
        input.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 1, l)).collect();
    let n = lines.len();
    let parsed = ordered_map(lines, workers, capacity, |(no, line)| {
        parse_document(line).map_err(|e| json!({"line": no, "error": e.to_string(), "raw": line}).to_string())
    });
    let mut docs = Vec::new();
    let mut bad = Vec::new();
    for p in parsed {
        match p {
            Ok(d) => docs.push(d),
            Err(e) => bad.push(e),
        }
    }
    (docs, bad, n)
}

pub struct Pipeline {
    cfg: PipelineConfig,
    plan: PipelinePlan,
    rules: RuleSet,
    transport: Box<dyn Transport>,
    decoder: Box<dyn ImageDecoder>,
    scorer: Box<dyn ImageScorer>,
}

impl Pipeline {
    /// Validates everything up front so a bad config fails before any I/O.
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let plan = cfg.parsed_plan()?;
        let rules = cfg.load_rules()?;
        let transport: Box<dyn Transport> = match &cfg.images.root {
            Some(root) => Box::new(FileTransport::new(root)),
            None => Box::new(NullTransport),
        };
        Ok(Self { cfg, plan, rules, transport, decoder: Box::new(PgmDecoder), scorer: Box::new(StubImageScorer) })
    }

    pub fn with_transport(mut self, transport: Box<dyn Transport>) -> Self {
        self.transport = transport;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn destructive(&self, id: StageId) -> bool {
        self.cfg.hard_drop || matches!(id, StageId::PreliminaryTextFilter | StageId::Dedup)
    }

    pub fn parse_input(&self, input: &str) -> (Vec<StreamDocument>, Vec<String>, usize) {
        parse_jsonl(input, self.cfg.workers, self.cfg.queue_capacity)
    }

    pub fn run_str(&self, input: &str) -> Result<RunOutput, PipelineError> {
        let mut timings = BTreeMap::new();
        let t0 = Instant::now();
        let (mut docs, malformed, input_lines) = self.parse_input(input);
        timings.insert("parse".to_string(), t0.elapsed().as_secs_f64());

        let mut notes: Vec<BTreeMap<&'static str, Value>> = vec![BTreeMap::new(); docs.len()];
        let mut rows = Vec::new();
        let mut rejects: BTreeMap<&'static str, Vec<(String, String)>> = BTreeMap::new();
        let mut triggers: BTreeMap<String, usize> = BTreeMap::new();
        let mut images = ImageCounters::default();
        let mut groups = DedupReport::default();

        for node in &self.plan.nodes {
            let members: Vec<StageId> = node.stages().iter().copied().filter(|s| self.cfg.stages.enabled(*s)).collect();
            if members.is_empty() {
                continue;
            }
            let t = Instant::now();
            let results: Vec<StageResult> = if members.len() == 1 {
                vec![self.run_stage(members[0], &docs)]
            } else {
                std::thread::scope(|s| {
                    let handles: Vec<_> = members.iter().map(|&m| s.spawn({
                        let docs = &docs;
                        move || self.run_stage(m, docs)
                    })).collect();
                    handles.into_iter().map(|h| h.join().expect("stage thread")).collect()
                })
            };
            let node_secs = t.elapsed().as_secs_f64();
            for m in &members {
                timings.insert(stage_name(*m).to_string(), node_secs);
            }

            // merge content changes: text from the detailed stage, images from the image stage
            let mut merged = docs.clone();
            for (m, r) in members.iter().zip(&results) {
                if *m == StageId::DetailedTextFilter {
                    if let Some(out) = &r.docs {
                        merged = out.clone();
                    }
                }
            }
            for (m, r) in members.iter().zip(&results) {
                if *m == StageId::ImageDownloadFilter {
                    if let Some(out) = &r.docs {
                        for (dst, src) in merged.iter_mut().zip(out) {
                            overlay_images(dst, src);
                        }
                    }
                }
            }

            let mut alive = vec![true; docs.len()];
            for (m, r) in members.iter().zip(results) {
                let name = stage_name(*m);
                let destructive = self.destructive(*m);
                let input = alive.iter().filter(|a| **a).count();
                let mut flagged = 0;
                for (i, drop) in r.drops.iter().enumerate() {
                    if !alive[i] {
                        continue;
                    }
                    if let Some(rej) = drop {
                        flagged += 1;
                        if destructive {
                            alive[i] = false;
                            let line = format!(
                                "{{\"stage\":{},\"reason\":{},\"detail\":{},\"document\":{}}}",
                                json!(name),
                                json!(rej.reason),
                                rej.detail,
                                serialize_document(&docs[i]).map_err(|e| PipelineError::Fatal(e.to_string()))?
                            );
                            rejects.entry(name).or_default().push((docs[i].id.clone(), line));
                        }
                    }
                }
                if !destructive {
                    for (i, note) in r.notes.into_iter().enumerate() {
                        notes[i].insert(name, note);
                    }
                }
                let output = if destructive { input - flagged } else { input };
                rows.push(StageRow {
                    stage: name,
                    symbol: m.symbol().to_string(),
                    mode: if destructive { "drop" } else { "annotate" },
                    input,
                    flagged,
                    output,
                    removal_fraction: if input == 0 { 0.0 } else { flagged as f64 / input as f64 },
                });
                for (k, v) in r.triggers {
                    *triggers.entry(k).or_default() += v;
                }
                if let Some(c) = r.images {
                    images = c;
                }
                if let Some(g) = r.dedup {
                    groups = g;
                }
            }

            let strip = self.cfg.hard_drop && members.contains(&StageId::ImageDownloadFilter);
            let mut next_docs = Vec::with_capacity(merged.len());
            let mut next_notes = Vec::with_capacity(merged.len());
            for ((mut d, n), keep) in merged.into_iter().zip(notes).zip(alive) {
                if keep {
                    if strip {
                        d.elements.retain(|e| e.image.as_ref().is_none_or(|img| img.status == ImageStatus::Fetched));
                    }
                    next_docs.push(d);
                    next_notes.push(n);
                }
            }
            docs = next_docs;
            notes = next_notes;
        }

        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.sort_by(|&a, &b| docs[a].id.cmp(&docs[b].id));
        let annotations: Vec<String> = order
            .iter()
            .filter(|&&i| !notes[i].is_empty())
            .map(|&i| {
                let mut obj = serde_json::Map::new();
                obj.insert("doc_id".into(), json!(docs[i].id));
                for (k, v) in &notes[i] {
                    obj.insert((*k).into(), v.clone());
                }
                Value::Object(obj).to_string()
            })
            .collect();
        let mut slots: Vec<Option<StreamDocument>> = docs.into_iter().map(Some).collect();
        let documents: Vec<StreamDocument> = order.iter().map(|&i| slots[i].take().expect("each index once")).collect();
        for v in rejects.values_mut() {
            v.sort_by(|a, b| a.0.cmp(&b.0));
        }
        let rejected_documents = rejects.values().map(Vec::len).sum();
        let report = RunReport {
            seed: self.cfg.seed,
            plan: self.plan.notation(),
            hard_drop: self.cfg.hard_drop,
            input_lines,
            malformed: malformed.len(),
            stages: rows,
            rule_triggers: triggers,
            images,
            duplicate_groups: groups.groups.len(),
            output_documents: documents.len(),
            rejected_documents,
        };
        timings.insert("total".to_string(), t0.elapsed().as_secs_f64());
        Ok(RunOutput {
            documents,
            rejects,
            malformed,
            annotations,
            duplicate_groups: groups.to_jsonl(),
            report,
            timings,
        })
    }

    /// Reads `input`, runs, and writes every artifact under `out_dir`:
    /// `documents.jsonl`, `annotations.jsonl`, `duplicate_groups.jsonl`,
    /// `rejects/<stage>.jsonl`, `rejects/malformed.jsonl`, `report.json`
    /// (or `report_path`) and `timings.json`.
    pub fn run_files(&self, input: &Path, out_dir: &Path, report_path: Option<&Path>) -> Result<RunReport, PipelineError> {
        let text = std::fs::read_to_string(input).map_err(io_err(input))?;
        let out = self.run_str(&text)?;
        write_output(&out, out_dir, report_path)?;
        Ok(out.report)
    }

    fn run_stage(&self, id: StageId, docs: &[StreamDocument]) -> StageResult {
        match id {
            StageId::PreliminaryTextFilter => self.stage_preliminary(docs),
            StageId::Dedup => self.stage_dedup(docs),
            StageId::ImageDownloadFilter => self.stage_images(docs),
            StageId::DetailedTextFilter => self.stage_detailed(docs),
        }
    }

    fn stage_preliminary(&self, docs: &[StreamDocument]) -> StageResult {
        let verdicts = ordered_map(docs, self.cfg.workers, self.cfg.queue_capacity, |d| preliminary_filter(d, &self.cfg.preliminary));
        let mut r = StageResult::default();
        for v in verdicts {
            for t in &v.triggered_rules {
                *r.triggers.entry(t.clone()).or_default() += 1;
            }
            let note = json!({"decision": decision_str(&v.decision), "triggered_rules": v.triggered_rules});
            r.drops.push(v.drop_reason().map(|reason| Rejection { reason: reason.to_string(), detail: json!({"triggered_rules": v.triggered_rules}) }));
            r.notes.push(note);
        }
        r
    }

    fn stage_dedup(&self, docs: &[StreamDocument]) -> StageResult {
        let dcfg = crate::dedup::DedupConfig { seed: self.cfg.seed, ..self.cfg.dedup.clone() };
        let (keep, report) = dedup_mask(docs, &dcfg).expect("dedup config validated");
        let survivor_of: HashMap<&str, &str> = report
            .groups
            .iter()
            .flat_map(|g| g.member_ids.iter().map(move |m| (m.as_str(), g.survivor_id.as_str())))
            .collect();
        let mut r = StageResult::default();
        for (d, k) in docs.iter().zip(&keep) {
            let survivor = survivor_of.get(d.id.as_str()).copied();
            r.drops.push((!k).then(|| Rejection { reason: "duplicate".into(), detail: json!({"survivor_id": survivor}) }));
            r.notes.push(json!({"duplicate_of": if *k { None } else { survivor }}));
        }
        r.dedup = Some(report);
        r
    }

    fn stage_images(&self, docs: &[StreamDocument]) -> StageResult {
        let icfg = &self.cfg.images;
        let mut docs = docs.to_vec();
        let mut counters = ImageCounters::default();
        let mut slots = Vec::new();
        let mut tasks = Vec::new();
        for (di, d) in docs.iter_mut().enumerate() {
            let id = d.id.clone();
            for (ei, el) in d.elements.iter_mut().enumerate() {
                let Some(img) = el.image.as_mut() else { continue };
                counters.image_refs += 1;
                if img.status != ImageStatus::Pending {
                    continue;
                }
                match FetchTask::new(&img.url, &id) {
                    Ok(t) => {
                        slots.push((di, ei));
                        tasks.push(t);
                    }
                    Err(_) => {
                        counters.invalid_urls += 1;
                        img.status = ImageStatus::Failed;
                    }
                }
            }
        }
        let mut bloom = BloomFilter::new(icfg.fetch.bloom_bits, icfg.fetch.bloom_hashes);
        let (outcomes, stats) = fetch_images(tasks, self.transport.as_ref(), &mut bloom, &icfg.fetch);
        counters.distinct_urls = stats.distinct_urls;
        counters.skipped_by_bloom = stats.skipped_by_bloom;
        counters.requests = stats.requests;

        // analyse each distinct successful body once
        let mut first_of: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, (t, o)) in outcomes.iter().enumerate() {
            if o.is_ok() {
                first_of.entry(t.url.as_str()).or_insert(i);
            }
        }
        let jobs: Vec<usize> = first_of.values().copied().collect();
        let analysed = ordered_map(jobs.clone(), self.cfg.workers, self.cfg.queue_capacity, |i| {
            let (task, outcome) = &outcomes[i];
            let body = outcome.as_ref().expect("successful outcome");
            let mut probe = ImageRef::pending(task.url.clone());
            analyze_image(&mut probe, &body.bytes, self.decoder.as_ref(), self.scorer.as_ref()).map(|_| probe)
        });
        let by_url: HashMap<&str, &Result<ImageRef, _>> =
            jobs.iter().zip(&analysed).map(|(&i, a)| (outcomes[i].0.url.as_str(), a)).collect();
        counters.fetched = analysed.iter().filter(|a| a.is_ok()).count();
        counters.decode_errors = analysed.len() - counters.fetched;

        for ((di, ei), (task, outcome)) in slots.iter().zip(&outcomes) {
            let img = docs[*di].elements[*ei].image.as_mut().expect("image slot");
            match outcome {
                Ok(_) => match by_url[task.url.as_str()] {
                    Ok(probe) => {
                        let (url, alt) = (img.url.clone(), img.alt.clone());
                        *img = ImageRef { url, alt, ..probe.clone() };
                    }
                    Err(_) => img.status = ImageStatus::Failed,
                },
                Err(FetchFailure::AlreadySeen) => img.status = ImageStatus::Dropped("duplicate_url".into()),
                Err(_) => img.status = ImageStatus::Failed,
            }
        }
        let failed_urls: std::collections::BTreeSet<&str> = outcomes
            .iter()
            .filter(|(_, o)| o.as_ref().is_err_and(|e| *e != FetchFailure::AlreadySeen))
            .map(|(t, _)| t.url.as_str())
            .collect();
        counters.failed = failed_urls.len();

        let table = OccurrenceTable::from_documents(&docs);
        mark_frequent_images(&mut docs, &image_occurrence_filter(&table, icfg.occurrence_limit));
        let mut r = StageResult::default();
        for d in &mut docs {
            let mut kept = 0;
            for img in d.elements.iter_mut().filter_map(|e| e.image.as_mut()) {
                if img.status == ImageStatus::Fetched {
                    match filter_image(img, &icfg.filter) {
                        Ok(ImageVerdict::Keep) => kept += 1,
                        Ok(ImageVerdict::Drop(reason)) => img.status = ImageStatus::Dropped(reason.as_str().into()),
                        Err(_) => img.status = ImageStatus::Failed,
                    }
                }
                if let ImageStatus::Dropped(reason) = &img.status {
                    *counters.dropped.entry(reason.clone()).or_default() += 1;
                }
            }
            let statuses: Vec<String> = d.images().map(|i| i.status.to_string()).collect();
            r.notes.push(json!({"kept_images": kept, "statuses": statuses}));
            r.drops.push((kept == 0).then(|| Rejection { reason: "no_image_left".into(), detail: json!({"statuses": statuses}) }));
        }
        r.docs = Some(docs);
        r.images = Some(counters);
        r
    }

    fn stage_detailed(&self, docs: &[StreamDocument]) -> StageResult {
        let results = ordered_map(docs, self.cfg.workers, self.cfg.queue_capacity, |d| apply_detailed_rules(d, &self.rules));
        let mut r = StageResult::default();
        let mut out = Vec::with_capacity(docs.len());
        for ((doc, v), orig) in results.into_iter().zip(docs) {
            for t in &v.triggered_rules {
                *r.triggers.entry(t.clone()).or_default() += 1;
            }
            r.notes.push(json!({"decision": decision_str(&v.decision), "triggered_rules": v.triggered_rules}));
            r.drops.push(v.drop_reason().map(|reason| Rejection { reason: reason.to_string(), detail: json!({"triggered_rules": v.triggered_rules}) }));
            out.push(if self.cfg.hard_drop { doc } else { orig.clone() });
        }
        r.docs = Some(out);
        r
    }
}

fn decision_str(d: &Decision) -> String {
    match d {
        Decision::Keep => "keep".into(),
        Decision::Modified => "modified".into(),
        Decision::Drop(r) => format!("drop:{r}"),
    }
}

/// Copies image references from `src` onto `dst` in order of appearance.
fn overlay_images(dst: &mut StreamDocument, src: &StreamDocument) {
    let mut from = src.elements.iter().filter_map(|e| e.image.as_ref());
    for img in dst.elements.iter_mut().filter_map(|e| e.image.as_mut()) {
        if let Some(s) = from.next() {
            *img = s.clone();
        }
    }
}

pub const REJECT_STAGES: [&str; 4] = ["preliminary", "dedup", "images", "detailed"];

pub fn write_output(out: &RunOutput, out_dir: &Path, report_path: Option<&Path>) -> Result<(), PipelineError> {
    let rejects_dir = out_dir.join("rejects");
    std::fs::create_dir_all(&rejects_dir).map_err(io_err(&rejects_dir))?;
    let write = |path: PathBuf, body: String| std::fs::write(&path, body).map_err(io_err(&path));
    let lines = |it: &mut dyn Iterator<Item = String>| it.map(|l| l + "\n").collect::<String>();

    let mut docs = String::new();
    for d in &out.documents {
        docs.push_str(&serialize_document(d).map_err(|e| PipelineError::Fatal(e.to_string()))?);
        docs.push('\n');
    }
    write(out_dir.join("documents.jsonl"), docs)?;
    write(out_dir.join("annotations.jsonl"), lines(&mut out.annotations.iter().cloned()))?;
    write(out_dir.join("duplicate_groups.jsonl"), out.duplicate_groups.clone())?;
    write(rejects_dir.join("malformed.jsonl"), lines(&mut out.malformed.iter().cloned()))?;
    for stage in REJECT_STAGES {
        let body = out.rejects.get(stage).map(|v| lines(&mut v.iter().map(|(_, l)| l.clone()))).unwrap_or_default();
        write(rejects_dir.join(format!("{stage}.jsonl")), body)?;
    }
    let report = serde_json::to_string_pretty(&out.report).expect("report serialises") + "\n";
    write(report_path.map_or_else(|| out_dir.join("report.json"), Path::to_path_buf), report)?;
    let timings = serde_json::to_string_pretty(&out.timings).expect("timings serialise") + "\n";
    write(out_dir.join("timings.json"), timings)?;
    Ok(())
}

/// Validates the config, then runs over `input` into `out_dir`.
pub fn run_pipeline(cfg: PipelineConfig, input: &Path, out_dir: &Path, report_path: Option<&Path>) -> Result<RunReport, PipelineError> {
    Pipeline::new(cfg)?.run_files(input, out_dir, report_path)
}
