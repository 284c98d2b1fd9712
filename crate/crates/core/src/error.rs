use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("no edges")]
    NoEdges,
    #[error("graph is disconnected ({components} components); extract the largest connected component first")]
    Disconnected { components: usize },
    #[error("node {node} has no out-edges")]
    ZeroDegree { node: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("linear solve did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error(
        "policy iteration for class pair ({y}, {k}) did not settle after {iterations} iterations; \
         last two policies differ in {changed_rows} rows"
    )]
    PolicyOscillation {
        y: usize,
        k: usize,
        iterations: usize,
        changed_rows: usize,
    },
    #[error(
        "attack needs {needed} flips but the global budget is {budget}; globally constrained attacks are not supported"
    )]
    UnsupportedGlobalBudget { needed: usize, budget: u64 },
    #[error("invalid adjacency entry at ({src}, {dst}): {value}")]
    InvalidEntry { src: usize, dst: usize, value: i64 },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("budget {budget} exceeds the {candidates} available candidates")]
    BudgetExceedsCandidates { budget: usize, candidates: usize },
    #[error("{method} is not supported in the {scenario} scenario")]
    UnsupportedScenario {
        method: &'static str,
        scenario: &'static str,
    },
    #[error("node features are required")]
    MissingFeatures,
    #[error("node labels are required")]
    MissingLabels,
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("dense PageRank is capped at {cap} nodes, got {nodes}")]
    TooLarge { nodes: usize, cap: usize },
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::PolicyOscillation { .. }
                | Error::Divergence(_)
                | Error::ZeroDegree { .. }
                | Error::InvalidEntry { .. }
        )
    }
}
