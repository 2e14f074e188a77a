use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::dedup::DedupConfig;
use crate::image_pipeline::{FetchConfig, ImageFilterConfig};
use crate::scheduler::{PipelinePlan, StageId};
use crate::text_filters::{PreliminaryConfig, RuleSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub preliminary: bool,
    pub dedup: bool,
    pub images: bool,
    pub detailed: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self { preliminary: true, dedup: true, images: true, detailed: true }
    }
}

impl StageToggles {
    pub fn enabled(&self, id: StageId) -> bool {
        match id {
            StageId::PreliminaryTextFilter => self.preliminary,
            StageId::Dedup => self.dedup,
            StageId::ImageDownloadFilter => self.images,
            StageId::DetailedTextFilter => self.detailed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RulesConfig {
    /// Rule file; the bundled English set when absent.
    pub path: Option<PathBuf>,
    /// Restrict to these rule ids, in file order.
    pub enable: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagesConfig {
    /// Directory served by the file transport. Without it every fetch fails
    /// as not found.
    pub root: Option<PathBuf>,
    pub occurrence_limit: usize,
    pub filter: ImageFilterConfig,
    pub fetch: FetchConfig,
}

impl Default for ImagesConfig {
    fn default() -> Self {
        Self { root: None, occurrence_limit: 10, filter: ImageFilterConfig::default(), fetch: FetchConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Keys the MinHash family; overrides `dedup.seed`.
    pub seed: u64,
    pub workers: usize,
    pub queue_capacity: usize,
    /// Delete what the image and detailed stages reject instead of
    /// annotating it.
    pub hard_drop: bool,
    pub plan: String,
    pub stages: StageToggles,
    pub preliminary: PreliminaryConfig,
    pub rules: RulesConfig,
    pub dedup: DedupConfig,
    pub images: ImagesConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 4,
            queue_capacity: 1024,
            hard_drop: false,
            plan: "①②(③④)".into(),
            stages: StageToggles::default(),
            preliminary: PreliminaryConfig::default(),
            rules: RulesConfig::default(),
            dedup: DedupConfig::default(),
            images: ImagesConfig::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl PipelineConfig {
    /// Parses TOML; relative paths resolve against `base_dir`.
    pub fn from_toml(source: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = toml::from_str(source).map_err(|e| config_err(e.to_string()))?;
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut() {
                if path.is_relative() {
                    *path = base_dir.join(&*path);
                }
            }
        };
        resolve(&mut cfg.rules.path);
        resolve(&mut cfg.images.root);
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let source = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&source, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parsed_plan(&self) -> Result<PipelinePlan, PipelineError> {
        self.plan.parse().map_err(|e| config_err(format!("plan {:?}: {e}", self.plan)))
    }

    /// The rule set named by `rules`, restricted to `rules.enable`.
    pub fn load_rules(&self) -> Result<RuleSet, PipelineError> {
        let all = match &self.rules.path {
            Some(p) => {
                let src = std::fs::read_to_string(p).map_err(|e| config_err(format!("rules {}: {e}", p.display())))?;
                RuleSet::from_toml(&src).map_err(|e| config_err(format!("rules {}: {e}", p.display())))?
            }
            None => RuleSet::english(),
        };
        let Some(enable) = &self.rules.enable else { return Ok(all) };
        let unknown: Vec<&str> = enable.iter().filter(|id| !all.contains(id)).map(String::as_str).collect();
        if !unknown.is_empty() {
            return Err(config_err(format!("unknown rule ids: {}", unknown.join(", "))));
        }
        RuleSet::new(all.rules.into_iter().filter(|r| enable.contains(&r.id)).collect()).map_err(|e| config_err(e.to_string()))
    }

    /// Everything that can be checked before a single output byte is written.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.parsed_plan()?;
        if self.workers == 0 {
            return Err(config_err("workers must be at least 1"));
        }
        if self.queue_capacity == 0 {
            return Err(config_err("queue_capacity must be at least 1"));
        }
        self.preliminary.validate().map_err(config_err)?;
        self.dedup.validate().map_err(|e| config_err(format!("dedup: {e}")))?;
        let f = &self.images.filter;
        if !(f.min_aspect > 0.0 && f.min_aspect <= f.max_aspect) {
            return Err(config_err("images.filter: need 0 < min_aspect <= max_aspect"));
        }
        if !(0.0..=10.0).contains(&f.min_aesthetic) {
            return Err(config_err("images.filter.min_aesthetic must be in [0, 10]"));
        }
        if !(0.0..=1.0).contains(&f.max_nsfw) {
            return Err(config_err("images.filter.max_nsfw must be in [0, 1]"));
        }
        let fetch = &self.images.fetch;
        if fetch.bloom_bits == 0 || fetch.bloom_hashes == 0 || fetch.workers == 0 || fetch.per_host == 0 {
            return Err(config_err("images.fetch: bloom_bits, bloom_hashes, workers and per_host must be positive"));
        }
        if let Some(root) = &self.images.root {
            if !root.is_dir() {
                return Err(config_err(format!("images.root {} is not a directory", root.display())));
            }
        }
        self.load_rules()?;
        Ok(())
    }
}
