//! Cost model for ordering the four filtering stages.
//!
//! A stage removes a fixed fraction of what it sees and processes documents
//! at a fixed rate. Image stages quote their rate in images, converted with
//! the images-per-document constant. A parallel group sees the same input
//! for every member, takes as long as its slowest member, and keeps the
//! product of the members' keep ratios.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageId {
    PreliminaryTextFilter,
    Dedup,
    ImageDownloadFilter,
    DetailedTextFilter,
}

impl StageId {
    pub const ALL: [StageId; 4] =
        [StageId::PreliminaryTextFilter, StageId::Dedup, StageId::ImageDownloadFilter, StageId::DetailedTextFilter];

    pub fn symbol(self) -> char {
        match self {
            StageId::PreliminaryTextFilter => '①',
            StageId::Dedup => '②',
            StageId::ImageDownloadFilter => '③',
            StageId::DetailedTextFilter => '④',
        }
    }

    pub fn from_symbol(c: char) -> Option<StageId> {
        StageId::ALL.into_iter().find(|s| s.symbol() == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateUnit {
    Documents,
    Images,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Cpu,
    Gpu,
    Bandwidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageProfile {
    pub id: StageId,
    pub rate: f64,
    pub unit: RateUnit,
    /// Fraction removed.
    pub filter_ratio: f64,
    pub resource: Resource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profiles {
    pub images_per_doc: f64,
    #[serde(rename = "stage")]
    pub stages: Vec<StageProfile>,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("stage {0} appears more than once")]
    DuplicateStage(char),
    #[error("stage {0} is missing")]
    MissingStage(char),
    #[error("① must run before ④")]
    DetailedBeforePreliminary,
    #[error("at most one parallel group is allowed")]
    MultipleGroups,
    #[error("a parallel group needs at least two stages")]
    GroupTooSmall,
    #[error("parallel group {0} holds more than one non-bandwidth stage")]
    GroupResourceConflict(String),
    #[error("cannot parse plan notation {0:?}")]
    Notation(String),
    #[error("no profile for stage {0}")]
    MissingProfile(char),
    #[error("invalid profile for stage {0}: {1}")]
    BadProfile(char, String),
    #[error("profile file: {0}")]
    Toml(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PlanNode {
    Single(StageId),
    Parallel(Vec<StageId>),
}

impl PlanNode {
    pub fn stages(&self) -> &[StageId] {
        match self {
            PlanNode::Single(s) => std::slice::from_ref(s),
            PlanNode::Parallel(v) => v,
        }
    }
}

impl fmt::Display for PlanNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanNode::Single(s) => write!(f, "{}", s.symbol()),
            PlanNode::Parallel(v) => {
                f.write_str("(")?;
                for s in v {
                    write!(f, "{}", s.symbol())?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PipelinePlan {
    pub nodes: Vec<PlanNode>,
}

impl PipelinePlan {
    pub fn notation(&self) -> String {
        self.to_string()
    }

    /// Checks the structural constraints; resource rules need profiles and
    /// are checked in [`plan_time`].
    pub fn validate(&self) -> Result<(), PlanError> {
        let mut seen = Vec::new();
        let mut groups = 0;
        for node in &self.nodes {
            if let PlanNode::Parallel(v) = node {
                groups += 1;
                if v.len() < 2 {
                    return Err(PlanError::GroupTooSmall);
                }
            }
            for &s in node.stages() {
                if seen.contains(&s) {
                    return Err(PlanError::DuplicateStage(s.symbol()));
                }
                seen.push(s);
            }
        }
        if groups > 1 {
            return Err(PlanError::MultipleGroups);
        }
        if let Some(s) = StageId::ALL.into_iter().find(|s| !seen.contains(s)) {
            return Err(PlanError::MissingStage(s.symbol()));
        }
        let node_of = |id: StageId| self.nodes.iter().position(|n| n.stages().contains(&id)).expect("all present");
        if node_of(StageId::PreliminaryTextFilter) >= node_of(StageId::DetailedTextFilter) {
            return Err(PlanError::DetailedBeforePreliminary);
        }
        Ok(())
    }
}

impl fmt::Display for PipelinePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in &self.nodes {
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

impl FromStr for PipelinePlan {
    type Err = PlanError;

    /// Circled digits with at most one parenthesised group, e.g. `①②(③④)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PlanError::Notation(s.to_string());
        let mut nodes = Vec::new();
        let mut group: Option<Vec<StageId>> = None;
        for c in s.chars().filter(|c| !c.is_whitespace()) {
            match (c, group.as_mut()) {
                ('(', None) => group = Some(Vec::new()),
                (')', Some(_)) => nodes.push(PlanNode::Parallel(group.take().expect("open group"))),
                (c, Some(g)) => g.push(StageId::from_symbol(c).ok_or_else(bad)?),
                (c, None) => nodes.push(PlanNode::Single(StageId::from_symbol(c).ok_or_else(bad)?)),
            }
        }
        if group.is_some() || nodes.is_empty() {
            return Err(bad());
        }
        let plan = PipelinePlan { nodes };
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeCost {
    pub node: String,
    pub seconds: f64,
    pub input_docs: f64,
    pub surviving_docs: f64,
    /// Resource class of the node's slowest member.
    pub bottleneck: Resource,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanCost {
    pub plan: String,
    pub nodes: Vec<NodeCost>,
    pub total_seconds: f64,
    pub total_hours: f64,
}

impl Profiles {
    /// The per-step settings reported for the production run.
    pub fn reference() -> Self {
        toml::from_str(include_str!("../data/profiles.toml")).expect("bundled profiles parse")
    }

    pub fn from_toml(source: &str) -> Result<Self, PlanError> {
        let p: Profiles = toml::from_str(source).map_err(|e| PlanError::Toml(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        for id in StageId::ALL {
            let p = self.get(id)?;
            if !(p.rate > 0.0) {
                return Err(PlanError::BadProfile(id.symbol(), format!("rate must be positive, got {}", p.rate)));
            }
            if !(0.0..1.0).contains(&p.filter_ratio) {
                return Err(PlanError::BadProfile(id.symbol(), format!("filter_ratio must be in [0, 1), got {}", p.filter_ratio)));
            }
        }
        if !(self.images_per_doc > 0.0) {
            return Err(PlanError::BadProfile('③', "images_per_doc must be positive".into()));
        }
        Ok(())
    }

    pub fn get(&self, id: StageId) -> Result<&StageProfile, PlanError> {
        self.stages.iter().find(|p| p.id == id).ok_or(PlanError::MissingProfile(id.symbol()))
    }

    pub fn get_mut(&mut self, id: StageId) -> Option<&mut StageProfile> {
        self.stages.iter_mut().find(|p| p.id == id)
    }

    /// Documents per second.
    pub fn doc_rate(&self, id: StageId) -> Result<f64, PlanError> {
        let p = self.get(id)?;
        Ok(match p.unit {
            RateUnit::Documents => p.rate,
            RateUnit::Images => p.rate / self.images_per_doc,
        })
    }
}

pub fn plan_time(plan: &PipelinePlan, profiles: &Profiles, n_docs: f64) -> Result<PlanCost, PlanError> {
    plan.validate()?;
    let mut n = n_docs;
    let mut nodes = Vec::with_capacity(plan.nodes.len());
    for node in &plan.nodes {
        let members = node.stages();
        if members.len() > 1 {
            let non_bw = members.iter().map(|&s| profiles.get(s)).filter(|p| !matches!(p, Ok(p) if p.resource == Resource::Bandwidth)).count();
            if non_bw > 1 {
                return Err(PlanError::GroupResourceConflict(node.to_string()));
            }
        }
        let mut seconds = 0.0;
        let mut keep = 1.0;
        let mut bottleneck = profiles.get(members[0])?.resource;
        for &s in members {
            let p = profiles.get(s)?;
            let t = n / profiles.doc_rate(s)?;
            if t > seconds {
                seconds = t;
                bottleneck = p.resource;
            }
            keep *= 1.0 - p.filter_ratio;
        }
        let out = n * keep;
        nodes.push(NodeCost { node: node.to_string(), seconds, input_docs: n, surviving_docs: out, bottleneck });
        n = out;
    }
    let total_seconds = nodes.iter().map(|c| c.seconds).sum::<f64>();
    Ok(PlanCost { plan: plan.notation(), nodes, total_seconds, total_hours: total_seconds / 3600.0 })
}

/// The twelve candidate plans: for each order of ①②④ with ① before ④, the
/// image stage is appended last or fused with the stage at each position.
pub fn enumerate_plans() -> Vec<PipelinePlan> {
    use StageId::*;
    let bases = [
        [PreliminaryTextFilter, Dedup, DetailedTextFilter],
        [Dedup, PreliminaryTextFilter, DetailedTextFilter],
        [PreliminaryTextFilter, DetailedTextFilter, Dedup],
    ];
    let mut plans = Vec::with_capacity(12);
    for base in bases {
        for j in (0..=3).rev() {
            let mut nodes: Vec<PlanNode> = base.iter().map(|&s| PlanNode::Single(s)).collect();
            if j == 3 {
                nodes.push(PlanNode::Single(ImageDownloadFilter));
            } else {
                nodes[j] = PlanNode::Parallel(vec![ImageDownloadFilter, base[j]]);
            }
            plans.push(PipelinePlan { nodes });
        }
    }
    plans
}

/// Every enumerated plan with its cost, in enumeration order.
pub fn cost_table(profiles: &Profiles, n_docs: f64) -> Result<Vec<(PipelinePlan, PlanCost)>, PlanError> {
    profiles.validate()?;
    enumerate_plans().into_iter().map(|p| plan_time(&p, profiles, n_docs).map(|c| (p, c))).collect()
}

/// Cheapest plan; ties go to the lexicographically smallest notation.
pub fn optimal_plan(profiles: &Profiles, n_docs: f64) -> Result<(PipelinePlan, PlanCost), PlanError> {
    let table = cost_table(profiles, n_docs)?;
    Ok(table
        .into_iter()
        .min_by(|(pa, a), (pb, b)| a.total_seconds.total_cmp(&b.total_seconds).then_with(|| pa.notation().cmp(&pb.notation())))
        .expect("twelve plans"))
}

/// `plan\thours` rows in enumeration order, the optimum marked with `*`.
pub fn table_tsv(profiles: &Profiles, n_docs: f64) -> Result<String, PlanError> {
    let table = cost_table(profiles, n_docs)?;
    let (best, _) = optimal_plan(profiles, n_docs)?;
    let mut out = String::from("plan\thours\toptimal\n");
    for (p, c) in table {
        let mark = if p == best { "*" } else { "" };
        out.push_str(&format!("{}\t{:.2}\t{mark}\n", p.notation(), c.total_hours));
    }
    Ok(out)
}
