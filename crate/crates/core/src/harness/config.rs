//! Experiment configuration, loaded from JSON and overridable from the command line.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{BridgenessOptions, Method};
use crate::error::{Error, Result};
use crate::graph::{LocalBudgetRule, Scenario};
use crate::logits::{AttackGraph, TrainConfig};
use crate::ppr;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Immune budget `C`: an absolute count of directed entries or a percentage.
///
/// Percentages are taken of the undirected clean edge count in Remove-only
/// and of the `N (N - 1) / 2` node pairs in Remove-Add, rounded down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BudgetRepr", into = "BudgetRepr")]
pub enum Budget {
    Absolute(usize),
    Percent(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BudgetRepr {
    Count(usize),
    Text(String),
}

impl TryFrom<BudgetRepr> for Budget {
    type Error = Error;

    fn try_from(r: BudgetRepr) -> Result<Self> {
        match r {
            BudgetRepr::Count(c) => Ok(Budget::Absolute(c)),
            BudgetRepr::Text(s) => s.parse(),
        }
    }
}

impl From<Budget> for BudgetRepr {
    fn from(b: Budget) -> Self {
        match b {
            Budget::Absolute(c) => BudgetRepr::Count(c),
            Budget::Percent(_) => BudgetRepr::Text(b.to_string()),
        }
    }
}

impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("budget {s:?} is neither a count nor a percentage like 5%"));
        match s.strip_suffix('%') {
            Some(p) => {
                let p: f64 = p.trim().parse().map_err(|_| bad())?;
                if !(0.0..=100.0).contains(&p) {
                    return Err(bad());
                }
                Ok(Budget::Percent(p))
            }
            None => s.parse().map(Budget::Absolute).map_err(|_| bad()),
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Absolute(c) => write!(f, "{c}"),
            Budget::Percent(p) => write!(f, "{p}%"),
        }
    }
}

impl Budget {
    pub fn resolve(self, scenario: Scenario, num_nodes: usize, num_edges: usize) -> usize {
        match self {
            Budget::Absolute(c) => c,
            Budget::Percent(p) => {
                let base = match scenario {
                    Scenario::RemoveOnly => num_edges,
                    Scenario::RemoveAdd => num_nodes * num_nodes.saturating_sub(1) / 2,
                };
                (p / 100.0 * base as f64 + 1e-9).floor() as usize
            }
        }
    }
}

/// A single budget or a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BudgetSpec {
    One(Budget),
    Sweep(Vec<Budget>),
}

impl Default for BudgetSpec {
    fn default() -> Self {
        BudgetSpec::One(Budget::Percent(5.0))
    }
}

impl BudgetSpec {
    pub fn budgets(&self) -> Vec<Budget> {
        match self {
            BudgetSpec::One(b) => vec![*b],
            BudgetSpec::Sweep(v) => v.clone(),
        }
    }

    /// `0.5%, 1%, ..., 5%`.
    pub fn percent_sweep() -> Self {
        BudgetSpec::Sweep((1..=10).map(|i| Budget::Percent(0.5 * f64::from(i))).collect())
    }
}

/// What to run: nothing, the meta-gradient immunizer or a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RunMethod {
    NoDefense,
    #[default]
    AdvImmune,
    Baseline(Method),
}

impl FromStr for RunMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "no-defense" => Ok(RunMethod::NoDefense),
            "advimmune" => Ok(RunMethod::AdvImmune),
            other => Ok(RunMethod::Baseline(other.parse()?)),
        }
    }
}

impl TryFrom<String> for RunMethod {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RunMethod> for String {
    fn from(m: RunMethod) -> Self {
        m.as_str().to_string()
    }
}

impl RunMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMethod::NoDefense => "none",
            RunMethod::AdvImmune => "advimmune",
            RunMethod::Baseline(m) => m.as_str(),
        }
    }
}

impl fmt::Display for RunMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Edge list plus optional label, feature, logits and split files.
    Files {
        edges: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        features: Option<PathBuf>,
        /// Rows follow the internal ids of the largest connected component.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        logits: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split: Option<PathBuf>,
    },
    PlantedPartition(PlantedPartition),
}

/// Stochastic block model with class-correlated binary features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedPartition {
    pub nodes: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_p_in: f64,
    pub feature_p_out: f64,
    pub seed: u64,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        Self {
            nodes: 1000,
            classes: 3,
            p_in: 0.012,
            p_out: 0.003,
            feature_dim: 60,
            feature_p_in: 0.2,
            feature_p_out: 0.05,
            seed: 0,
        }
    }
}

fn default_alpha() -> f64 {
    ppr::DEFAULT_ALPHA
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_bins() -> usize {
    10
}

fn default_max_iterations() -> usize {
    200
}

fn default_scenario() -> Scenario {
    Scenario::RemoveOnly
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "default_scenario")]
    pub scenario: Scenario,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Attacker `b_t`; the scenario default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_local_budget: Option<LocalBudgetRule>,
    #[serde(default)]
    pub immune_budget: BudgetSpec,
    /// Defender `c_t`; the scenario default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub immune_local_budget: Option<LocalBudgetRule>,
    #[serde(default)]
    pub method: RunMethod,
    /// Seeds of randomized baselines.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
    /// Lock both directions of a pair at once.
    #[serde(default)]
    pub symmetric: bool,
    #[serde(default)]
    pub bridgeness: BridgenessOptions,
    #[serde(default)]
    pub accuracy_graph: AttackGraph,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    /// Directory relative paths are resolved against; not part of the hash.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetConfig) -> Self {
        Self {
            dataset,
            scenario: default_scenario(),
            alpha: default_alpha(),
            attack_local_budget: None,
            immune_budget: BudgetSpec::default(),
            immune_local_budget: None,
            method: RunMethod::default(),
            seeds: default_seeds(),
            out: PathBuf::from("out"),
            train: TrainConfig::default(),
            symmetric: false,
            bridgeness: BridgenessOptions::default(),
            accuracy_graph: AttackGraph::default(),
            max_iterations: default_max_iterations(),
            histogram_bins: default_bins(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config; relative paths in it are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be positive".into()));
        }
        if let DatasetConfig::PlantedPartition(p) = &self.dataset {
            let probs = [p.p_in, p.p_out, p.feature_p_in, p.feature_p_out];
            if p.nodes < 2 || p.classes < 2 || probs.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Config(
                    "planted partition needs >= 2 nodes and classes and probabilities in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn attack_rule(&self) -> LocalBudgetRule {
        self.attack_local_budget
            .unwrap_or_else(|| LocalBudgetRule::attack_default(self.scenario))
    }

    pub fn immune_rule(&self) -> LocalBudgetRule {
        self.immune_local_budget
            .unwrap_or_else(|| LocalBudgetRule::immune_default(self.scenario))
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON, output directory excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))[..16].to_string()
    }

    pub fn header(&self, seed: u64) -> String {
        format!("advimmune {VERSION} config {} seed {seed}", self.hash())
    }
}
