use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::{json, Value};

use omniengine::extract::{extract_capture, ingest_warc, read_html_dir, ExtractOptions, Extraction, WarcReader};
use omniengine::metrics::{aggregate_documents, BinSpec};
use omniengine::pipeline::{parse_jsonl, Pipeline, PipelineConfig, RunOutput, StageToggles};
use omniengine::scheduler::{optimal_plan, table_tsv, Profiles};
use omniengine::stream_format::{serialize_document, StreamDocument};
use omniengine::text_filters::{evaluate_ruleset, feedback_round, AnnotationSet, FeedbackState, RuleSet};

#[derive(Parser)]
#[command(name = "omniengine", version, about = "Build image-text interleaved corpora from web captures")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Delete documents rejected by the image and detailed stages.
    #[arg(long, global = true)]
    hard_drop: bool,
    /// Input file; stdin when absent or `-`.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Output file (a directory for `run` and `stats`); stdout when absent.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// HTML directory (with `.meta` sidecars) or WARC file to documents.
    Extract,
    #[command(subcommand)]
    Filter(FilterCommand),
    /// Near-duplicate removal; the report gets the duplicate groups.
    Dedup,
    /// Fetch, hash, score and filter images.
    Images,
    /// Cost every stage ordering.
    Schedule {
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long, default_value_t = 1e9)]
        docs: f64,
    },
    /// Quality-metric histograms and the image/token joint table.
    Stats {
        /// Bin edges (TOML); defaults when absent.
        #[arg(long)]
        bins: Option<PathBuf>,
    },
    /// All enabled stages in the configured order.
    Run,
}

#[derive(Subcommand)]
enum FilterCommand {
    /// Preliminary heuristics, then the detailed rules.
    Apply,
    /// Per-rule trigger ratio and false positive rate as TSV.
    Evaluate {
        #[arg(long)]
        annotations: PathBuf,
    },
    /// One human-feedback round: sample, review sheet, promote candidates.
    Feedback {
        #[arg(long)]
        annotations: PathBuf,
        /// Candidate rules (TOML).
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        #[arg(long, default_value_t = 100)]
        sample_size: usize,
        #[arg(long, default_value_t = 5)]
        max_candidates: usize,
        /// Where to write the grown rule set.
        #[arg(long)]
        rules_out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Fatal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Fatal(_) => 1,
        }
    }
}

impl From<omniengine::pipeline::PipelineError> for CliError {
    fn from(e: omniengine::pipeline::PipelineError) -> Self {
        match e {
            omniengine::pipeline::PipelineError::Config(m) => CliError::Config(m),
            other => CliError::Fatal(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn fatal(e: impl std::fmt::Display) -> CliError {
    CliError::Fatal(e.to_string())
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl Common {
    fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
            cfg.images.fetch.workers = w;
        }
        cfg.hard_drop |= self.hard_drop;
        Ok(cfg)
    }

    fn read_input(&self) -> Result<String> {
        match self.input.as_deref() {
            Some(p) if p != Path::new("-") => fs::read_to_string(p).map_err(|e| fatal(format!("{}: {e}", p.display()))),
            _ => {
                let mut s = String::new();
                io::stdin().read_to_string(&mut s).map_err(fatal)?;
                Ok(s)
            }
        }
    }

    fn write_output(&self, body: &str) -> Result<()> {
        match &self.output {
            Some(p) => write_file(p, body),
            None => io::stdout().write_all(body.as_bytes()).map_err(fatal),
        }
    }

    fn write_report(&self, body: &str) -> Result<()> {
        match &self.report {
            Some(p) => write_file(p, body),
            None => Ok(()),
        }
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| fatal(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, body).map_err(|e| fatal(format!("{}: {e}", path.display())))
}

fn jsonl(docs: &[StreamDocument]) -> Result<String> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serialize_document(d).map_err(fatal)?);
        out.push('\n');
    }
    Ok(out)
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serialisable") + "\n"
}

fn warn_malformed(malformed: &[String]) {
    for m in malformed {
        warn!("quarantined malformed line: {m}");
    }
}

/// Runs a subset of the stages and emits surviving documents plus a JSON
/// report holding the run report, rejects and malformed lines.
fn run_subset(common: &Common, mut cfg: PipelineConfig, stages: StageToggles) -> Result<()> {
    cfg.stages = stages;
    let pipeline = Pipeline::new(cfg)?;
    let input = common.read_input()?;
    let out = pipeline.run_str(&input)?;
    warn_malformed(&out.malformed);
    common.write_output(&jsonl(&out.documents)?)?;
    common.write_report(&pretty(&subset_report(&out)))
}

fn subset_report(out: &RunOutput) -> Value {
    let parse = |l: &String| serde_json::from_str::<Value>(l).expect("own JSON");
    let rejects: Vec<Value> = out.rejects.values().flatten().map(|(_, l)| parse(l)).collect();
    json!({
        "report": out.report,
        "rejects": rejects,
        "malformed": out.malformed.iter().map(parse).collect::<Vec<_>>(),
        "annotations": out.annotations.iter().map(parse).collect::<Vec<_>>(),
    })
}

fn cmd_extract(common: &Common) -> Result<()> {
    let opts = ExtractOptions::default();
    let path = common.input.clone().ok_or_else(|| config_err("extract needs --input (HTML directory or WARC file)"))?;
    let captures = if path.is_dir() {
        read_html_dir(&path).map_err(fatal)?
    } else {
        let file = fs::File::open(&path).map_err(|e| fatal(format!("{}: {e}", path.display())))?;
        let reader = WarcReader::open(file).map_err(fatal)?;
        let mut caps = Vec::new();
        for c in ingest_warc(reader) {
            match c {
                Ok(c) => caps.push(c),
                Err(e) => {
                    warn!("WARC read stopped: {e}");
                    break;
                }
            }
        }
        caps
    };
    let mut docs = Vec::new();
    let mut dropped: BTreeMap<&'static str, usize> = BTreeMap::new();
    let mut pages = Vec::new();
    for cap in &captures {
        match extract_capture(cap, &opts) {
            Ok(Extraction::Document(d)) => {
                pages.push(json!({"url": cap.url, "doc_id": d.id}));
                docs.push(d);
            }
            Ok(Extraction::Dropped(r)) => {
                *dropped.entry(r.as_str()).or_default() += 1;
                pages.push(json!({"url": cap.url, "dropped": r.as_str()}));
            }
            Err(e) => {
                *dropped.entry("error").or_default() += 1;
                pages.push(json!({"url": cap.url, "error": e.to_string()}));
            }
        }
    }
    info!("extracted {} of {} pages", docs.len(), captures.len());
    common.write_output(&jsonl(&docs)?)?;
    common.write_report(&pretty(&json!({"pages": captures.len(), "documents": docs.len(), "dropped": dropped, "detail": pages})))
}

fn cmd_filter(common: &Common, cmd: &FilterCommand) -> Result<()> {
    let cfg = common.pipeline_config()?;
    match cmd {
        FilterCommand::Apply => {
            let cfg = PipelineConfig { hard_drop: true, ..cfg };
            run_subset(common, cfg, StageToggles { preliminary: true, dedup: false, images: false, detailed: true })
        }
        FilterCommand::Evaluate { annotations } => {
            let rules = cfg.load_rules()?;
            let ann = read_annotations(annotations)?;
            let (docs, malformed, _) = parse_jsonl(&common.read_input()?, cfg.workers, cfg.queue_capacity);
            warn_malformed(&malformed);
            let report = evaluate_ruleset(&docs, &ann, &rules).map_err(fatal)?;
            common.write_output(&report.to_tsv())?;
            common.write_report(&pretty(&report))
        }
        FilterCommand::Feedback { annotations, candidates, threshold, sample_size, max_candidates, rules_out } => {
            let rules = cfg.load_rules()?;
            let src = fs::read_to_string(candidates).map_err(|e| config_err(format!("{}: {e}", candidates.display())))?;
            let candidates = RuleSet::from_toml(&src).map_err(config_err)?;
            let ann = read_annotations(annotations)?;
            let (docs, malformed, _) = parse_jsonl(&common.read_input()?, cfg.workers, cfg.queue_capacity);
            warn_malformed(&malformed);
            let state = FeedbackState { rules, ..FeedbackState::new(docs, *sample_size, *max_candidates) };
            let (next, report) = feedback_round(state, &candidates, &ann, *threshold, cfg.seed).map_err(fatal)?;
            info!("promoted {:?}, rejected {:?}", report.promoted(), report.rejected());
            common.write_output(&report.review_sheet)?;
            common.write_report(&pretty(&report))?;
            match rules_out {
                Some(p) => write_file(p, &next.rules.to_toml()),
                None => Ok(()),
            }
        }
    }
}

fn read_annotations(path: &Path) -> Result<AnnotationSet> {
    let src = fs::read_to_string(path).map_err(|e| fatal(format!("{}: {e}", path.display())))?;
    AnnotationSet::from_jsonl(&src).map_err(fatal)
}

fn cmd_dedup(common: &Common) -> Result<()> {
    let cfg = common.pipeline_config()?;
    cfg.validate()?;
    let (docs, malformed, _) = parse_jsonl(&common.read_input()?, cfg.workers, cfg.queue_capacity);
    warn_malformed(&malformed);
    let dcfg = omniengine::dedup::DedupConfig { seed: cfg.seed, ..cfg.dedup };
    let (keep, report) = omniengine::dedup::dedup_mask(&docs, &dcfg).map_err(fatal)?;
    let survivors: Vec<StreamDocument> = docs.into_iter().zip(keep).filter(|(_, k)| *k).map(|(d, _)| d).collect();
    info!("{} duplicate groups, {} documents removed", report.groups.len(), report.removed());
    common.write_output(&jsonl(&survivors)?)?;
    common.write_report(&report.to_jsonl())
}

fn cmd_schedule(common: &Common, profiles: Option<&Path>, docs: f64) -> Result<()> {
    let profiles = match profiles {
        Some(p) => {
            let src = fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            Profiles::from_toml(&src).map_err(config_err)?
        }
        None => Profiles::reference(),
    };
    if !(docs.is_finite() && docs > 0.0) {
        return Err(config_err("--docs must be positive"));
    }
    let mut out = table_tsv(&profiles, docs).map_err(config_err)?;
    let (best, cost) = optimal_plan(&profiles, docs).map_err(config_err)?;
    out.push_str(&format!("optimal\t{}\t{:.2}\n", best.notation(), cost.total_hours));
    common.write_output(&out)
}

fn cmd_stats(common: &Common, bins: Option<&Path>) -> Result<()> {
    let cfg = common.pipeline_config()?;
    let spec = match bins {
        Some(p) => {
            let src = fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            toml::from_str(&src).map_err(config_err)?
        }
        None => BinSpec::default(),
    };
    spec.validate().map_err(config_err)?;
    let out_dir = common.output.clone().ok_or_else(|| config_err("stats needs --output DIR"))?;
    let (docs, malformed, _) = parse_jsonl(&common.read_input()?, cfg.workers, cfg.queue_capacity);
    warn_malformed(&malformed);
    let agg = aggregate_documents(&docs, &spec).map_err(fatal)?;
    fs::create_dir_all(&out_dir).map_err(|e| fatal(format!("{}: {e}", out_dir.display())))?;
    for (metric, h) in &agg.histograms {
        write_file(&out_dir.join(format!("{metric}.tsv")), &h.to_tsv())?;
    }
    write_file(&out_dir.join("joint.json"), &pretty(&agg.joint_json()))?;
    common.write_report(&pretty(&json!({
        "documents": agg.documents,
        "degenerate": agg.degenerate,
        "malformed": malformed.len(),
        "mean_images": agg.mean_images(),
        "mean_tokens": agg.mean_tokens(),
    })))
}

fn cmd_run(common: &Common) -> Result<()> {
    let pipeline = Pipeline::new(common.pipeline_config()?)?;
    let input = common.input.clone().ok_or_else(|| config_err("run needs --input"))?;
    let out_dir = common.output.clone().ok_or_else(|| config_err("run needs --output DIR"))?;
    let report = pipeline.run_files(&input, &out_dir, common.report.as_deref())?;
    info!("{} documents in, {} out, {} rejected", report.input_lines, report.output_documents, report.rejected_documents);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match &cli.command {
        Command::Extract => cmd_extract(common),
        Command::Filter(f) => cmd_filter(common, f),
        Command::Dedup => cmd_dedup(common),
        Command::Images => {
            let cfg = common.pipeline_config()?;
            run_subset(common, cfg, StageToggles { preliminary: false, dedup: false, images: true, detailed: false })
        }
        Command::Schedule { profiles, docs } => cmd_schedule(common, profiles.as_deref(), *docs),
        Command::Stats { bins } => cmd_stats(common, bins.as_deref()),
        Command::Run => cmd_run(common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OMNIENGINE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = match &e {
                CliError::Config(m) => format!("config error: {m}"),
                CliError::Fatal(m) => m.clone(),
            };
            eprintln!("omniengine: {msg}");
            ExitCode::from(e.code())
        }
    }
}
