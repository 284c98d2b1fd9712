//! Worst-case margins under structure perturbations.
//!
//! For a class pair `(y, k)` the margin of node `t` on graph `G` is
//! `pi_G(e_t) (H[:, y] - H[:, k]) = (1 - alpha) v_t` with `v = M^-1 d` and
//! `d = H[:, y] - H[:, k]`. Since `v = d + alpha P v`, minimizing `v` is a
//! discounted MDP whose action at node `i` is the choice of its out-neighbor
//! set. With only local budgets the per-node choices decouple, and policy
//! iteration yields one configuration that is worst for every source node
//! at once.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::graph::{Adjacency, AttackSpec, FragileSet};
use crate::mask::ImmuneMask;
use crate::ppr::{self, DiffusionOperator};

pub type ClassPair = (usize, usize);

/// Signed flips of the worst-case graph relative to the clean adjacency.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PerturbationDelta {
    /// `(src, dst, sign)`, sorted; `+1` adds a non-edge, `-1` removes an edge.
    entries: Vec<(usize, usize, i8)>,
}

impl PerturbationDelta {
    pub fn new(mut entries: Vec<(usize, usize, i8)>) -> Self {
        entries.sort_unstable();
        entries.dedup();
        Self { entries }
    }

    pub fn entries(&self) -> &[(usize, usize, i8)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sign(&self, i: usize, j: usize) -> i8 {
        self.entries
            .binary_search_by(|&(a, b, _)| (a, b).cmp(&(i, j)))
            .map_or(0, |p| self.entries[p].2)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.sign(i, j) != 0
    }

    /// Flips per source row.
    pub fn flips_per_row(&self, num_nodes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_nodes];
        for &(i, _, _) in &self.entries {
            counts[i] += 1;
        }
        counts
    }
}

/// Robustness certificate of a single node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub node: usize,
    pub label_class: usize,
    pub worst_class: usize,
    pub worst_margin: f64,
    pub robust: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub alpha: f64,
    pub max_iterations: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            alpha: ppr::DEFAULT_ALPHA,
            max_iterations: 200,
        }
    }
}

/// Output of [`worst_case_attack`].
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub pair: ClassPair,
    pub delta: PerturbationDelta,
    /// Worst-case margin of every source node for this pair.
    pub margins: Vec<f64>,
    pub iterations: usize,
    /// `sum(v)` after each policy evaluation; non-increasing.
    pub objective_trace: Vec<f64>,
}

/// `pi_{A}(e_t) (H[:, y] - H[:, k])`.
pub fn margin(t: usize, y: usize, k: usize, adjacency: &Adjacency, logits: &DMatrix<f64>, alpha: f64) -> Result<f64> {
    let op = DiffusionOperator::new(adjacency.clone(), alpha)?;
    if t >= op.num_nodes() {
        return Err(Error::Shape(format!("node {t} out of range")));
    }
    let v = op.solve(&class_gap(logits, y, k)?, None)?;
    Ok((1.0 - alpha) * v[t])
}

/// `H[:, y] - H[:, k]`.
pub fn class_gap(logits: &DMatrix<f64>, y: usize, k: usize) -> Result<Vec<f64>> {
    if y >= logits.ncols() || k >= logits.ncols() {
        return Err(Error::Shape(format!(
            "class pair ({y}, {k}) out of range for {} classes",
            logits.ncols()
        )));
    }
    Ok(logits
        .column(y)
        .iter()
        .zip(logits.column(k).iter())
        .map(|(a, b)| a - b)
        .collect())
}

/// Static per-node attack options.
struct NodeOptions {
    removable: Vec<Vec<usize>>,
    /// `Some` for listed fragile sets, `None` when every non-neighbor is addable.
    addable: Option<Vec<Vec<usize>>>,
}

impl NodeOptions {
    fn new(base: &Adjacency, spec: &AttackSpec, frozen: Option<&ImmuneMask>) -> Self {
        let n = base.num_nodes();
        let open = |i: usize, j: usize| frozen.is_none_or(|m| !m.is_immunized(i, j));
        match spec.fragile() {
            FragileSet::Listed(rows) => {
                let mut removable = vec![Vec::new(); n];
                let mut addable = vec![Vec::new(); n];
                for (i, row) in rows.iter().enumerate() {
                    for &j in row.iter().filter(|&&j| open(i, j)) {
                        if base.has_edge(i, j) {
                            removable[i].push(j);
                        } else {
                            addable[i].push(j);
                        }
                    }
                }
                Self {
                    removable,
                    addable: Some(addable),
                }
            }
            FragileSet::AllNonFixed => Self {
                removable: (0..n)
                    .map(|i| {
                        base.row(i)
                            .iter()
                            .copied()
                            .filter(|&j| !spec.is_fixed(i, j) && open(i, j))
                            .collect()
                    })
                    .collect(),
                addable: None,
            },
        }
    }
}

/// Chosen flips for one row.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct RowChoice {
    removed: Vec<usize>,
    added: Vec<usize>,
}

fn by_value_then_index(v: &[f64]) -> impl Fn(&usize, &usize) -> std::cmp::Ordering + '_ {
    move |&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b))
}

struct RowContext<'a> {
    base: &'a Adjacency,
    spec: &'a AttackSpec,
    frozen: Option<&'a ImmuneMask>,
    options: &'a NodeOptions,
    /// Nodes sorted by value ascending, for implicit addable sets.
    ascending: &'a [usize],
}

impl RowContext<'_> {
    /// The exact minimizer of the neighbor mean of `v` at row `i`.
    ///
    /// For a fixed number of removals `r` and additions `a` the mean is
    /// minimized by dropping the `r` largest removable values and adding the
    /// `a` smallest addable ones, so enumerating `(r, a)` is exact.
    fn best(&self, i: usize, v: &[f64]) -> (RowChoice, f64) {
        let base_row = self.base.row(i);
        let budget = self.spec.local_budget()[i];
        let base_sum: f64 = base_row.iter().map(|&j| v[j]).sum();
        let base_deg = base_row.len();

        let mut removable = self.options.removable[i].clone();
        removable.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
        removable.truncate(budget);

        let addable: Vec<usize> = match &self.options.addable {
            Some(rows) => {
                let mut a = rows[i].clone();
                a.sort_by(by_value_then_index(v));
                a.truncate(budget);
                a
            }
            None => self
                .ascending
                .iter()
                .copied()
                .filter(|&j| {
                    j != i
                        && !self.base.has_edge(i, j)
                        && !self.spec.is_fixed(i, j)
                        && self.frozen.is_none_or(|m| !m.is_immunized(i, j))
                })
                .take(budget)
                .collect(),
        };

        let mut best = (0usize, 0usize);
        let mut best_mean = if base_deg > 0 {
            base_sum / base_deg as f64
        } else {
            f64::INFINITY
        };
        let mut removed_sum = 0.0;
        for r in 0..=removable.len() {
            if r > 0 {
                removed_sum += v[removable[r - 1]];
            }
            let mut added_sum = 0.0;
            for a in 0..=addable.len().min(budget - r) {
                if a > 0 {
                    added_sum += v[addable[a - 1]];
                }
                let deg = base_deg - r + a;
                if deg == 0 || (r, a) == (0, 0) {
                    continue;
                }
                let mean = (base_sum - removed_sum + added_sum) / deg as f64;
                if mean < best_mean {
                    best_mean = mean;
                    best = (r, a);
                }
            }
        }
        let mut removed = removable[..best.0].to_vec();
        let mut added = addable[..best.1].to_vec();
        removed.sort_unstable();
        added.sort_unstable();
        (RowChoice { removed, added }, best_mean)
    }
}

fn apply_choices(base: &Adjacency, choices: &[RowChoice]) -> Adjacency {
    let rows = choices
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut row: Vec<usize> = base
                .row(i)
                .iter()
                .copied()
                .filter(|j| c.removed.binary_search(j).is_err())
                .collect();
            row.extend_from_slice(&c.added);
            row.sort_unstable();
            row
        })
        .collect();
    Adjacency::from_sorted_rows_unchecked(rows)
}

/// Worst-case perturbation for the class pair `(y, k)` by policy iteration.
///
/// Entries immunized in `frozen` are removed from the fragile set first.
pub fn worst_case_attack(
    pair: ClassPair,
    spec: &AttackSpec,
    logits: &DMatrix<f64>,
    base: &Adjacency,
    frozen: Option<&ImmuneMask>,
    config: &AttackConfig,
) -> Result<AttackResult> {
    let n = base.num_nodes();
    if spec.num_nodes() != n || logits.nrows() != n {
        return Err(Error::Shape(format!(
            "attack spec has {} nodes, logits {}, graph {n}",
            spec.num_nodes(),
            logits.nrows()
        )));
    }
    let (y, k) = pair;
    let gap = class_gap(logits, y, k)?;
    let options = NodeOptions::new(base, spec, frozen);
    let mut choices = vec![RowChoice::default(); n];
    let mut op = DiffusionOperator::new(base.clone(), config.alpha)?;
    let mut v = op.solve(&gap, None)?;
    let mut objective_trace = vec![v.iter().sum::<f64>()];
    let mut iterations = 0;
    loop {
        if iterations >= config.max_iterations {
            let changed = improve(&op, base, spec, frozen, &options, &choices, &v)
                .iter()
                .filter(|c| c.is_some())
                .count();
            return Err(Error::PolicyOscillation {
                y,
                k,
                iterations,
                changed_rows: changed,
            });
        }
        let proposals = improve(&op, base, spec, frozen, &options, &choices, &v);
        let mut changed = false;
        for (c, p) in choices.iter_mut().zip(proposals) {
            if let Some(p) = p {
                *c = p;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        iterations += 1;
        op = DiffusionOperator::new(apply_choices(base, &choices), config.alpha)?;
        v = op.solve(&gap, Some(&v))?;
        objective_trace.push(v.iter().sum());
    }

    let mut entries = Vec::new();
    for (i, c) in choices.iter().enumerate() {
        entries.extend(c.removed.iter().map(|&j| (i, j, -1)));
        entries.extend(c.added.iter().map(|&j| (i, j, 1)));
    }
    let delta = PerturbationDelta::new(entries);
    if delta.len() as u64 > spec.global_budget() {
        return Err(Error::UnsupportedGlobalBudget {
            needed: delta.len(),
            budget: spec.global_budget(),
        });
    }
    let scale = 1.0 - config.alpha;
    Ok(AttackResult {
        pair,
        delta,
        margins: v.iter().map(|x| x * scale).collect(),
        iterations,
        objective_trace,
    })
}

/// One improvement step; `Some` marks rows whose choice changes.
fn improve(
    op: &DiffusionOperator,
    base: &Adjacency,
    spec: &AttackSpec,
    frozen: Option<&ImmuneMask>,
    options: &NodeOptions,
    choices: &[RowChoice],
    v: &[f64],
) -> Vec<Option<RowChoice>> {
    let ascending = if options.addable.is_none() {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(by_value_then_index(v));
        order
    } else {
        Vec::new()
    };
    let ctx = RowContext {
        base,
        spec,
        frozen,
        options,
        ascending: &ascending,
    };
    exec::map_range(v.len(), |i| {
        let current = op.neighbor_mean(v, i);
        let (choice, mean) = ctx.best(i, v);
        let tol = 1e-12 * (1.0 + current.abs());
        (choice != choices[i] && mean < current - tol).then_some(choice)
    })
}

/// Certificates for every node plus the worst-case deltas of every class pair.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub predictions: Vec<usize>,
    pub clean_diffused: DMatrix<f64>,
    pub reports: Vec<MarginReport>,
    pub deltas: BTreeMap<ClassPair, PerturbationDelta>,
    pub pair_margins: BTreeMap<ClassPair, Vec<f64>>,
}

impl Certificate {
    pub fn num_robust(&self) -> usize {
        self.reports.iter().filter(|r| r.robust).count()
    }

    pub fn robust_ratio(&self) -> f64 {
        if self.reports.is_empty() {
            return 0.0;
        }
        self.num_robust() as f64 / self.reports.len() as f64
    }

    pub fn mean_worst_margin(&self) -> f64 {
        if self.reports.is_empty() {
            return 0.0;
        }
        self.reports.iter().map(|r| r.worst_margin).sum::<f64>() / self.reports.len() as f64
    }

    /// Clean-graph margin `H_diff[t, y_t] - H_diff[t, k]`.
    pub fn clean_margin(&self, t: usize, k: usize) -> f64 {
        let y = self.predictions[t];
        self.clean_diffused[(t, y)] - self.clean_diffused[(t, k)]
    }

    pub fn write_reports(&self, path: &Path, header: &str) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        std::io::Write::write_all(&mut file, format!("# {header}\n").as_bytes())?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["node", "label_class", "worst_class", "worst_margin", "robust"])?;
        for r in &self.reports {
            w.write_record([
                r.node.to_string(),
                r.label_class.to_string(),
                r.worst_class.to_string(),
                r.worst_margin.to_string(),
                r.robust.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_deltas(&self, path: &Path, header: &str) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        std::io::Write::write_all(&mut file, format!("# {header}\n").as_bytes())?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["y", "k", "src", "dst", "sign"])?;
        for (&(y, k), delta) in &self.deltas {
            for &(i, j, s) in delta.entries() {
                w.write_record([
                    y.to_string(),
                    k.to_string(),
                    i.to_string(),
                    j.to_string(),
                    s.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a delta file written by [`Certificate::write_deltas`].
pub fn read_deltas(path: &Path) -> Result<BTreeMap<ClassPair, PerturbationDelta>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut grouped: BTreeMap<ClassPair, Vec<(usize, usize, i8)>> = BTreeMap::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let parse = |c: usize| -> Result<i64> {
            record
                .get(c)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: line + 2,
                    message: "expected y,k,src,dst,sign".into(),
                })
        };
        let (y, k, i, j, s) = (parse(0)?, parse(1)?, parse(2)?, parse(3)?, parse(4)?);
        grouped
            .entry((y as usize, k as usize))
            .or_default()
            .push((i as usize, j as usize, s as i8));
    }
    Ok(grouped
        .into_iter()
        .map(|(p, e)| (p, PerturbationDelta::new(e)))
        .collect())
}

/// All ordered class pairs `(y, k)`, `y != k`.
pub fn class_pairs(num_classes: usize) -> Vec<ClassPair> {
    (0..num_classes)
        .flat_map(|y| (0..num_classes).filter(move |&k| k != y).map(move |k| (y, k)))
        .collect()
}

/// Certifies every node against the admissible perturbations in `spec`.
///
/// Robustness is measured for the clean predicted class of each node.
pub fn certify(
    base: &Adjacency,
    logits: &DMatrix<f64>,
    spec: &AttackSpec,
    frozen: Option<&ImmuneMask>,
    config: &AttackConfig,
) -> Result<Certificate> {
    let num_classes = logits.ncols();
    if num_classes < 2 {
        return Err(Error::TooFewClasses(num_classes));
    }
    let clean = DiffusionOperator::new(base.clone(), config.alpha)?;
    let clean_diffused = ppr::diffused_logits(&clean, logits)?;
    let predictions = ppr::predict(&clean_diffused);
    let pairs = class_pairs(num_classes);
    let attacks: Vec<Result<AttackResult>> = exec::map_slice(&pairs, |&pair| {
        worst_case_attack(pair, spec, logits, base, frozen, config)
    });
    let mut deltas = BTreeMap::new();
    let mut pair_margins = BTreeMap::new();
    for attack in attacks {
        let attack = attack?;
        deltas.insert(attack.pair, attack.delta);
        pair_margins.insert(attack.pair, attack.margins);
    }
    let reports = build_reports(&predictions, num_classes, &pair_margins);
    Ok(Certificate {
        predictions,
        clean_diffused,
        reports,
        deltas,
        pair_margins,
    })
}

pub(crate) fn build_reports(
    predictions: &[usize],
    num_classes: usize,
    pair_margins: &BTreeMap<ClassPair, Vec<f64>>,
) -> Vec<MarginReport> {
    predictions
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            let mut worst_class = usize::MAX;
            let mut worst_margin = f64::INFINITY;
            for k in (0..num_classes).filter(|&k| k != y) {
                let m = pair_margins[&(y, k)][t];
                if m < worst_margin {
                    worst_margin = m;
                    worst_class = k;
                }
            }
            MarginReport {
                node: t,
                label_class: y,
                worst_class,
                worst_margin,
                robust: worst_margin > 0.0,
            }
        })
        .collect()
}
