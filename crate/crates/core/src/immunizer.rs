//! Greedy immunization by meta-gradient of the summed worst-case margins.
//!
//! The worst-case deltas are computed once on the clean graph. Each round
//! masks them with the current immune set, re-picks every node's worst rival
//! class, differentiates the summed margins with respect to the mask and
//! locks the single entry whose removal from the attack helps the most.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::certifier::{self, class_gap, AttackConfig, Certificate, ClassPair, MarginReport, PerturbationDelta};
use crate::error::{Error, Result};
use crate::exec;
use crate::graph::{Adjacency, AttackSpec};
use crate::mask::ImmuneMask;
use crate::ppr::DiffusionOperator;

/// `A + A' * A_c`: the perturbed graph with immunized entries reverted.
pub fn modified_adjacency(base: &Adjacency, delta: &PerturbationDelta, mask: &ImmuneMask) -> Result<Adjacency> {
    let n = base.num_nodes();
    if mask.num_nodes() != n {
        return Err(Error::Shape(format!("mask has {} nodes, graph {n}", mask.num_nodes())));
    }
    let mut rows: Vec<Vec<usize>> = base.rows().to_vec();
    let mut touched = vec![false; n];
    for &(i, j, s) in delta.entries() {
        if mask.is_immunized(i, j) {
            continue;
        }
        let present = base.has_edge(i, j);
        match (s, present) {
            (-1, true) => rows[i].retain(|&x| x != j),
            (1, false) => rows[i].push(j),
            _ => {
                return Err(Error::InvalidEntry {
                    src: i,
                    dst: j,
                    value: i64::from(present) + i64::from(s),
                })
            }
        }
        touched[i] = true;
    }
    for (row, t) in rows.iter_mut().zip(&touched) {
        if *t {
            row.sort_unstable();
        }
    }
    Adjacency::from_rows(rows)
}

/// The rival class minimizing node `t`'s margin on its masked worst-case graphs.
pub fn worst_case_class(
    t: usize,
    label_class: usize,
    base: &Adjacency,
    deltas: &BTreeMap<ClassPair, PerturbationDelta>,
    mask: &ImmuneMask,
    logits: &DMatrix<f64>,
    alpha: f64,
) -> Result<usize> {
    let mut best = (f64::INFINITY, usize::MAX);
    let empty = PerturbationDelta::default();
    for k in (0..logits.ncols()).filter(|&k| k != label_class) {
        let delta = deltas.get(&(label_class, k)).unwrap_or(&empty);
        let adj = modified_adjacency(base, delta, mask)?;
        let m = certifier::margin(t, label_class, k, &adj, logits, alpha)?;
        if m < best.0 {
            best = (m, k);
        }
    }
    Ok(best.1)
}

/// Sparse meta-gradient over the union of delta supports; zero elsewhere.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetaGradient {
    pub entries: BTreeMap<(usize, usize), f64>,
}

impl MetaGradient {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(&(i, j)).copied().unwrap_or(0.0)
    }

    /// `V = -grad`.
    pub fn values(&self) -> ValueMatrix {
        ValueMatrix {
            entries: self.entries.iter().map(|(&k, &g)| (k, -g)).collect(),
        }
    }
}

/// `V = -meta-gradient`; the gain of immunizing each entry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValueMatrix {
    pub entries: BTreeMap<(usize, usize), f64>,
}

impl ValueMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(&(i, j)).copied().unwrap_or(0.0)
    }
}

/// Gradient contribution of one node group sharing the class pair of `delta`.
///
/// With `v = M^-1 d` on the masked graph and `w = M^-T 1_group`,
/// `d sum_t m_t / d A_hat[i, j] = alpha (1 - alpha) w_i (v_j - (P v)_i) / D_i`,
/// and the mask enters through `A_hat[i, j] = A[i, j] + A'[i, j] A_c[i, j]`.
fn group_gradient(op: &DiffusionOperator, delta: &PerturbationDelta, v: &[f64], w: &[f64]) -> Vec<f64> {
    let alpha = op.alpha();
    let scale = alpha * (1.0 - alpha);
    delta
        .entries()
        .iter()
        .map(|&(i, j, s)| {
            let pv = op.neighbor_mean(v, i);
            f64::from(s) * scale * w[i] * (v[j] - pv) * op.inv_degree()[i]
        })
        .collect()
}

fn group_indicator(worst: &[usize], labels: &[usize], pair: ClassPair) -> Vec<f64> {
    worst
        .iter()
        .zip(labels)
        .map(|(&k, &y)| if (y, k) == pair { 1.0 } else { 0.0 })
        .collect()
}

type GradEntry = ((usize, usize), f64);

/// Meta-gradient of `sum_t m_{y_t, k_t}(t, G_hat)` with respect to the mask.
///
/// `label_classes` are the clean predictions `y_t`, `worst_classes` the
/// rival classes `k_t` held fixed for this evaluation.
pub fn meta_gradient(
    base: &Adjacency,
    deltas: &BTreeMap<ClassPair, PerturbationDelta>,
    mask: &ImmuneMask,
    logits: &DMatrix<f64>,
    alpha: f64,
    label_classes: &[usize],
    worst_classes: &[usize],
) -> Result<MetaGradient> {
    let mut groups: Vec<ClassPair> = label_classes.iter().zip(worst_classes).map(|(&y, &k)| (y, k)).collect();
    groups.sort_unstable();
    groups.dedup();
    let empty = PerturbationDelta::default();
    let parts: Vec<Result<Vec<GradEntry>>> = exec::map_slice(&groups, |&pair| {
        let delta = deltas.get(&pair).unwrap_or(&empty);
        if delta.is_empty() {
            return Ok(Vec::new());
        }
        let op = DiffusionOperator::new(modified_adjacency(base, delta, mask)?, alpha)?;
        let v = op.solve(&class_gap(logits, pair.0, pair.1)?, None)?;
        let w = op.solve_transposed(&group_indicator(worst_classes, label_classes, pair), None)?;
        let g = group_gradient(&op, delta, &v, &w);
        Ok(delta
            .entries()
            .iter()
            .zip(g)
            .map(|(&(i, j, _), g)| ((i, j), g))
            .collect())
    });
    let mut out = MetaGradient::default();
    for &(i, j) in union_support(deltas).iter() {
        out.entries.insert((i, j), 0.0);
    }
    for part in parts {
        for (key, g) in part? {
            *out.entries.get_mut(&key).expect("support entry") += g;
        }
    }
    Ok(out)
}

fn union_support(deltas: &BTreeMap<ClassPair, PerturbationDelta>) -> Vec<(usize, usize)> {
    let mut support: Vec<(usize, usize)> = deltas
        .values()
        .flat_map(|d| d.entries().iter().map(|&(i, j, _)| (i, j)))
        .collect();
    support.sort_unstable();
    support.dedup();
    support
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImmunizeOptions {
    /// Lock `(i, j)` and `(j, i)` together at a cost of two budget units.
    pub symmetric: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    BudgetReached,
    /// No remaining entry has positive value within the budgets.
    Exhausted,
}

#[derive(Debug, Clone)]
pub struct Immunization {
    pub mask: ImmuneMask,
    pub stop: StopReason,
    /// Summed masked worst-case margin before each round, plus the final one.
    pub objective_trace: Vec<f64>,
}

type Refresh = (DiffusionOperator, Vec<f64>);

/// Per class pair state carried across greedy rounds.
struct PairState {
    pair: ClassPair,
    delta_index: Vec<usize>,
    op: DiffusionOperator,
    v: Vec<f64>,
    group: Vec<bool>,
    w: Vec<f64>,
    w_fresh: bool,
    dirty: bool,
}

/// Greedy immune-pair selection with the precomputed clean-graph deltas.
///
/// `mask` carries the budgets and any prior selections; it is extended until
/// its global budget is used or no entry has positive value.
pub fn greedy_immunize(
    base: &Adjacency,
    logits: &DMatrix<f64>,
    alpha: f64,
    label_classes: &[usize],
    deltas: &BTreeMap<ClassPair, PerturbationDelta>,
    mut mask: ImmuneMask,
    options: ImmunizeOptions,
) -> Result<Immunization> {
    let n = base.num_nodes();
    if label_classes.len() != n || logits.nrows() != n {
        return Err(Error::Shape(format!(
            "{} labels and {} logit rows for {n} nodes",
            label_classes.len(),
            logits.nrows()
        )));
    }
    let num_classes = logits.ncols();
    let support = union_support(deltas);
    let position: BTreeMap<(usize, usize), usize> = support.iter().enumerate().map(|(p, &e)| (e, p)).collect();

    let mut present: Vec<bool> = vec![false; num_classes];
    for &y in label_classes {
        present[y] = true;
    }
    let pairs: Vec<ClassPair> = certifier::class_pairs(num_classes)
        .into_iter()
        .filter(|&(y, _)| present[y])
        .collect();
    let empty = PerturbationDelta::default();
    let init: Vec<Result<PairState>> = exec::map_slice(&pairs, |&pair| {
        let delta = deltas.get(&pair).unwrap_or(&empty);
        let op = DiffusionOperator::new(modified_adjacency(base, delta, &mask)?, alpha)?;
        let v = op.solve(&class_gap(logits, pair.0, pair.1)?, None)?;
        Ok(PairState {
            pair,
            delta_index: delta.entries().iter().map(|&(i, j, _)| position[&(i, j)]).collect(),
            op,
            v,
            group: vec![false; n],
            w: vec![0.0; n],
            w_fresh: false,
            dirty: false,
        })
    });
    let mut states = init.into_iter().collect::<Result<Vec<_>>>()?;
    let state_of: BTreeMap<ClassPair, usize> = states.iter().enumerate().map(|(s, st)| (st.pair, s)).collect();

    let scale = 1.0 - alpha;
    let mut objective_trace = Vec::new();
    let mut round = mask.num_immunized();
    let stop = loop {
        // refresh values of pairs touched by the last selection
        let refreshed: Vec<Option<Result<Refresh>>> = exec::map_slice(&states, |st| {
            st.dirty.then(|| {
                let delta = deltas.get(&st.pair).unwrap_or(&empty);
                let op = DiffusionOperator::new(modified_adjacency(base, delta, &mask)?, alpha)?;
                let v = op.solve(&class_gap(logits, st.pair.0, st.pair.1)?, Some(&st.v))?;
                Ok((op, v))
            })
        });
        for (st, r) in states.iter_mut().zip(refreshed) {
            if let Some(r) = r {
                let (op, v) = r?;
                st.op = op;
                st.v = v;
                st.dirty = false;
                st.w_fresh = false;
            }
        }

        // worst rival class per node
        let mut worst = vec![0usize; n];
        let mut objective = 0.0;
        for t in 0..n {
            let y = label_classes[t];
            let mut best = (f64::INFINITY, usize::MAX);
            for k in (0..num_classes).filter(|&k| k != y) {
                let m = scale * states[state_of[&(y, k)]].v[t];
                if m < best.0 {
                    best = (m, k);
                }
            }
            worst[t] = best.1;
            objective += best.0;
        }
        objective_trace.push(objective);
        if mask.remaining() == 0 {
            break StopReason::BudgetReached;
        }

        let adjoints: Vec<Option<Result<Vec<f64>>>> = exec::map_slice(&states, |st| {
            let group: Vec<bool> = (0..n).map(|t| (label_classes[t], worst[t]) == st.pair).collect();
            if st.w_fresh && group == st.group {
                return None;
            }
            if !group.iter().any(|&g| g) {
                return Some(Ok(vec![0.0; n]));
            }
            let rhs: Vec<f64> = group.iter().map(|&g| f64::from(u8::from(g))).collect();
            Some(st.op.solve_transposed(&rhs, Some(&st.w)))
        });
        for (st, a) in states.iter_mut().zip(adjoints) {
            if let Some(a) = a {
                st.w = a?;
                st.w_fresh = true;
                st.group = (0..n).map(|t| (label_classes[t], worst[t]) == st.pair).collect();
            }
        }

        let contributions: Vec<Vec<f64>> = exec::map_slice(&states, |st| {
            let delta = deltas.get(&st.pair).unwrap_or(&empty);
            if delta.is_empty() || st.group.iter().all(|&g| !g) {
                return Vec::new();
            }
            group_gradient(&st.op, delta, &st.v, &st.w)
        });
        let mut gradient = vec![0.0; support.len()];
        for (st, contrib) in states.iter().zip(&contributions) {
            for (&p, g) in st.delta_index.iter().zip(contrib) {
                gradient[p] += g;
            }
        }

        let mut choice: Option<(usize, f64)> = None;
        for (p, &(i, j)) in support.iter().enumerate() {
            if mask.is_immunized(i, j) {
                continue;
            }
            let value = -gradient[p];
            let feasible = if options.symmetric {
                mask.can_immunize_pair(i, j)
            } else {
                mask.can_immunize(i, j)
            };
            if value > 0.0 && feasible && choice.is_none_or(|(_, best)| value > best) {
                choice = Some((p, value));
            }
        }
        let Some((p, value)) = choice else {
            log::warn!(
                "immunization stopped after {} of {} entries: no remaining entry has positive value",
                mask.num_immunized(),
                mask.global_budget()
            );
            break StopReason::Exhausted;
        };
        let (i, j) = support[p];
        mask.immunize(i, j, round, value)?;
        if options.symmetric && !mask.is_immunized(j, i) {
            mask.immunize(j, i, round, value)?;
        }
        round += 1;
        for st in &mut states {
            let delta = deltas.get(&st.pair).unwrap_or(&empty);
            if delta.contains(i, j) || (options.symmetric && delta.contains(j, i)) {
                st.dirty = true;
            }
        }
    };
    Ok(Immunization {
        mask,
        stop,
        objective_trace,
    })
}

/// Certification outcome under a mask.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub robust_ratio: f64,
    pub mean_worst_margin: f64,
    pub budget_used: usize,
    pub reports: Vec<MarginReport>,
    pub certificate: Certificate,
}

/// Re-certifies with every immunized entry removed from the fragile set.
pub fn evaluate_immunization(
    base: &Adjacency,
    logits: &DMatrix<f64>,
    spec: &AttackSpec,
    mask: &ImmuneMask,
    config: &AttackConfig,
) -> Result<Evaluation> {
    mask.check_feasible()?;
    let certificate = certifier::certify(base, logits, spec, Some(mask), config)?;
    Ok(Evaluation {
        robust_ratio: certificate.robust_ratio(),
        mean_worst_margin: certificate.mean_worst_margin(),
        budget_used: mask.num_immunized(),
        reports: certificate.reports.clone(),
        certificate,
    })
}
