//! Robustness certificates for PageRank-diffusion node classifiers under
//! structure perturbations, and greedy immunization of node pairs.
//!
//! The pipeline: load a graph ([`graph`]), obtain raw logits ([`logits`]),
//! certify every node against its worst-case perturbed graph
//! ([`certifier`]), then select immune node pairs by meta-gradient
//! ([`immunizer`]) or by one of the [`baselines`] and re-certify.

pub mod baselines;
pub mod certifier;
pub mod error;
pub mod exec;
pub mod graph;
pub mod harness;
pub mod immunizer;
pub mod logits;
pub mod mask;
pub mod ppr;

pub use certifier::{
    certify, worst_case_attack, AttackConfig, Certificate, ClassPair, MarginReport, PerturbationDelta,
};
pub use error::{Error, Result};
pub use graph::{AttackSpec, Graph, LocalBudgetRule, Scenario};
pub use immunizer::{evaluate_immunization, greedy_immunize, ImmunizeOptions};
pub use mask::ImmuneMask;
