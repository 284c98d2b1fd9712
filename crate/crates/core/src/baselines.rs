//! Heuristic immune-pair selectors used for comparison.
//!
//! Every selector ranks or samples directed entries and fills an
//! [`ImmuneMask`] greedily, skipping entries that would break a budget.
//! Fixed entries are never candidates since the attacker cannot touch them.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certifier::{ClassPair, PerturbationDelta};
use crate::error::{Error, Result};
use crate::exec;
use crate::graph::{Adjacency, AttackSpec, Features, Scenario};
use crate::mask::ImmuneMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Random,
    AttackRandom,
    Jaccard,
    Cosine,
    Betweenness,
    Bridgeness,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Random,
        Method::AttackRandom,
        Method::Jaccard,
        Method::Cosine,
        Method::Betweenness,
        Method::Bridgeness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::AttackRandom => "attack-random",
            Method::Jaccard => "jaccard",
            Method::Cosine => "cosine",
            Method::Betweenness => "betweenness",
            Method::Bridgeness => "bridgeness",
        }
    }

    pub fn is_randomized(self) -> bool {
        matches!(self, Method::Random | Method::AttackRandom)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline method {s:?}")))
    }
}

/// Neighborhood Jaccard variant used by Bridgeness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BridgenessOptions {
    /// Count label multiplicities instead of label sets.
    pub multiset: bool,
    /// Treat each endpoint as its own neighbor.
    pub include_endpoints: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub method: Method,
    pub seed: u64,
    pub scenario: Scenario,
    pub global_budget: usize,
    pub local_budget: Vec<Option<usize>>,
    /// Budget shares for connected and unconnected pairs in Remove-Add.
    pub remove_add_split: (f64, f64),
    pub bridgeness: BridgenessOptions,
}

impl BaselineConfig {
    pub fn new(method: Method, scenario: Scenario, global_budget: usize, local_budget: Vec<Option<usize>>) -> Self {
        Self {
            method,
            seed: 0,
            scenario,
            global_budget,
            local_budget,
            remove_add_split: (0.3, 0.7),
            bridgeness: BridgenessOptions::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn empty_mask(&self, num_nodes: usize) -> Result<ImmuneMask> {
        let (p, q) = self.remove_add_split;
        if p < 0.0 || q < 0.0 || (p + q - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("split ({p}, {q}) must be a distribution")));
        }
        ImmuneMask::new(num_nodes, self.global_budget, self.local_budget.clone())
    }
}

/// Everything a selector may look at.
#[derive(Debug, Clone, Copy)]
pub struct BaselineInput<'a> {
    pub adjacency: &'a Adjacency,
    pub spec: &'a AttackSpec,
    pub features: Option<&'a Features>,
    /// One class per node; ground truth where known.
    pub labels: Option<&'a [usize]>,
    pub deltas: Option<&'a BTreeMap<ClassPair, PerturbationDelta>>,
}

pub fn select(cfg: &BaselineConfig, input: &BaselineInput<'_>) -> Result<ImmuneMask> {
    match cfg.method {
        Method::Random => random_select(cfg, input.adjacency, input.spec),
        Method::AttackRandom => {
            let deltas = input
                .deltas
                .ok_or_else(|| Error::Config("attack-random needs certifier deltas".into()))?;
            attack_random_select(cfg, input.adjacency.num_nodes(), deltas)
        }
        Method::Jaccard | Method::Cosine => similarity_select(
            cfg,
            input.adjacency,
            input.spec,
            input.features.ok_or(Error::MissingFeatures)?,
            input.labels.ok_or(Error::MissingLabels)?,
        ),
        Method::Betweenness => betweenness_select(cfg, input.adjacency, input.spec),
        Method::Bridgeness => bridgeness_select(
            cfg,
            input.adjacency,
            input.spec,
            input.labels.ok_or(Error::MissingLabels)?,
        ),
    }
}

/// Uniform permutation of `0..len` generated lazily by a sparse Fisher-Yates.
struct LazyShuffle {
    len: usize,
    next: usize,
    swapped: HashMap<usize, usize>,
    rng: ChaCha8Rng,
}

impl LazyShuffle {
    fn new(len: usize, seed: u64) -> Self {
        Self {
            len,
            next: 0,
            swapped: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Iterator for LazyShuffle {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.next == self.len {
            return None;
        }
        let i = self.next;
        let j = self.rng.random_range(i..self.len);
        let at = |s: &HashMap<usize, usize>, k: usize| s.get(&k).copied().unwrap_or(k);
        let (vi, vj) = (at(&self.swapped, i), at(&self.swapped, j));
        self.swapped.insert(j, vi);
        self.swapped.remove(&i);
        self.next += 1;
        Some(vj)
    }
}

fn check_candidates(budget: usize, candidates: usize) -> Result<()> {
    if budget > candidates {
        return Err(Error::BudgetExceedsCandidates { budget, candidates });
    }
    Ok(())
}

/// Takes entries in order while the mask has room; returns how many were taken.
fn fill<I: IntoIterator<Item = (usize, usize)>>(mask: &mut ImmuneMask, limit: usize, entries: I) -> Result<usize> {
    let mut taken = 0;
    for (i, j) in entries {
        if taken == limit || mask.remaining() == 0 {
            break;
        }
        if mask.can_immunize(i, j) {
            mask.immunize(i, j, mask.num_immunized(), 0.0)?;
            taken += 1;
        }
    }
    Ok(taken)
}

fn fragile_edges(adjacency: &Adjacency, spec: &AttackSpec) -> Vec<(usize, usize)> {
    adjacency.entries().filter(|&(i, j)| !spec.is_fixed(i, j)).collect()
}

/// Uniform sampling without replacement over the non-fixed candidate entries.
///
/// Remove-only draws from existing non-fixed edges, Remove-Add from every
/// non-fixed off-diagonal pair.
pub fn random_select(cfg: &BaselineConfig, adjacency: &Adjacency, spec: &AttackSpec) -> Result<ImmuneMask> {
    let n = adjacency.num_nodes();
    let mut mask = cfg.empty_mask(n)?;
    match cfg.scenario {
        Scenario::RemoveOnly => {
            let edges = fragile_edges(adjacency, spec);
            check_candidates(cfg.global_budget, edges.len())?;
            fill(
                &mut mask,
                usize::MAX,
                LazyShuffle::new(edges.len(), cfg.seed).map(|p| edges[p]),
            )?;
        }
        Scenario::RemoveAdd => {
            check_candidates(cfg.global_budget, n * (n - 1) - spec.num_fixed())?;
            let pairs = LazyShuffle::new(n * n, cfg.seed)
                .map(|p| (p / n, p % n))
                .filter(|&(i, j)| i != j && !spec.is_fixed(i, j));
            fill(&mut mask, usize::MAX, pairs)?;
        }
    }
    Ok(mask)
}

/// Uniform sampling from the union of the worst-case delta supports.
pub fn attack_random_select(
    cfg: &BaselineConfig,
    num_nodes: usize,
    deltas: &BTreeMap<ClassPair, PerturbationDelta>,
) -> Result<ImmuneMask> {
    let mut support: Vec<(usize, usize)> = deltas
        .values()
        .flat_map(|d| d.entries().iter().map(|&(i, j, _)| (i, j)))
        .collect();
    support.sort_unstable();
    support.dedup();
    check_candidates(cfg.global_budget, support.len())?;
    let mut mask = cfg.empty_mask(num_nodes)?;
    fill(
        &mut mask,
        usize::MAX,
        LazyShuffle::new(support.len(), cfg.seed).map(|p| support[p]),
    )?;
    Ok(mask)
}

/// `|a & b| / |a | b|` over nonzero coordinates; 0 when both are empty.
pub fn jaccard(a: &[f64], b: &[f64]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x != 0.0, y != 0.0);
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Cosine similarity; 0 if either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb).sqrt()
    }
}

type Scored = (f64, usize, usize);

/// Sorts by score (descending unless `ascending`) with lexicographic ties.
fn rank(mut scored: Vec<Scored>, ascending: bool) -> Vec<(usize, usize)> {
    scored.sort_by(|a, b| {
        let by_score = if ascending {
            a.0.total_cmp(&b.0)
        } else {
            b.0.total_cmp(&a.0)
        };
        by_score.then((a.1, a.2).cmp(&(b.1, b.2)))
    });
    scored.into_iter().map(|(_, i, j)| (i, j)).collect()
}

/// Jaccard or cosine feature similarity selector.
///
/// Remove-only protects connected same-label pairs by similarity descending,
/// followed by the remaining connected pairs. Remove-Add spends the connected
/// share of the budget that way and the rest on unconnected different-label
/// pairs by similarity ascending, so they cannot be added.
pub fn similarity_select(
    cfg: &BaselineConfig,
    adjacency: &Adjacency,
    spec: &AttackSpec,
    features: &Features,
    labels: &[usize],
) -> Result<ImmuneMask> {
    let n = adjacency.num_nodes();
    if features.num_nodes() != n || labels.len() != n {
        return Err(Error::Shape("features and labels must cover every node".into()));
    }
    let sim: fn(&[f64], &[f64]) -> f64 = match cfg.method {
        Method::Jaccard => {
            if !features.is_binary() {
                return Err(Error::Config("jaccard needs binary features".into()));
            }
            jaccard
        }
        Method::Cosine => cosine,
        m => return Err(Error::Config(format!("{m} is not a similarity method"))),
    };
    let score = |i: usize, j: usize| sim(features.row(i), features.row(j));
    let (same, other): (Vec<Scored>, Vec<Scored>) = fragile_edges(adjacency, spec)
        .into_iter()
        .map(|(i, j)| (score(i, j), i, j))
        .partition(|&(_, i, j)| labels[i] == labels[j]);
    let connected: Vec<(usize, usize)> = rank(same, false).into_iter().chain(rank(other, false)).collect();

    let mut mask = cfg.empty_mask(n)?;
    match cfg.scenario {
        Scenario::RemoveOnly => {
            fill(&mut mask, usize::MAX, connected)?;
        }
        Scenario::RemoveAdd => {
            let share = (cfg.remove_add_split.0 * cfg.global_budget as f64).round() as usize;
            fill(&mut mask, share, connected)?;
            let rows: Vec<Vec<Scored>> = exec::map_range(n, |i| {
                (0..n)
                    .filter(|&j| j != i && !adjacency.has_edge(i, j) && !spec.is_fixed(i, j) && labels[i] != labels[j])
                    .map(|j| (score(i, j), i, j))
                    .collect()
            });
            fill(&mut mask, usize::MAX, rank(rows.into_iter().flatten().collect(), true))?;
        }
    }
    Ok(mask)
}

/// Exact edge betweenness of an undirected graph by Brandes accumulation.
///
/// The score of `(i, j)` is stored at `row(i)` position of `j` and equals the
/// score of `(j, i)`.
pub fn edge_betweenness(adjacency: &Adjacency) -> Vec<Vec<f64>> {
    let n = adjacency.num_nodes();
    let offsets: Vec<usize> = std::iter::once(0)
        .chain(adjacency.rows().iter().scan(0, |acc, r| {
            *acc += r.len();
            Some(*acc)
        }))
        .collect();
    let nnz = offsets[n];
    let chunks = exec::map_range(n.div_ceil(32), |c| {
        let mut credit = vec![0.0; nnz];
        let mut sigma = vec![0.0f64; n];
        let mut dist = vec![usize::MAX; n];
        let mut delta = vec![0.0f64; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = std::collections::VecDeque::new();
        for s in (c * 32)..((c + 1) * 32).min(n) {
            sigma.fill(0.0);
            dist.fill(usize::MAX);
            delta.fill(0.0);
            order.clear();
            sigma[s] = 1.0;
            dist[s] = 0;
            queue.push_back(s);
            while let Some(v) = queue.pop_front() {
                order.push(v);
                for &w in adjacency.row(v) {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[v] + 1;
                        queue.push_back(w);
                    }
                    if dist[w] == dist[v] + 1 {
                        sigma[w] += sigma[v];
                    }
                }
            }
            for &w in order.iter().rev() {
                for (p, &v) in adjacency.row(w).iter().enumerate() {
                    if dist[v] != usize::MAX && dist[v] + 1 == dist[w] {
                        let c = sigma[v] / sigma[w] * (1.0 + delta[w]);
                        credit[offsets[w] + p] += c;
                        delta[v] += c;
                    }
                }
            }
        }
        credit
    });
    let mut total = vec![0.0; nnz];
    for chunk in chunks {
        for (t, c) in total.iter_mut().zip(chunk) {
            *t += c;
        }
    }
    // each unordered pair of endpoints is counted from both sources
    (0..n)
        .map(|i| {
            adjacency
                .row(i)
                .iter()
                .enumerate()
                .map(|(p, &j)| {
                    let q = adjacency.row(j).binary_search(&i).expect("symmetric adjacency");
                    (total[offsets[i] + p] + total[offsets[j] + q]) / 2.0
                })
                .collect()
        })
        .collect()
}

/// Top non-fixed edges by edge betweenness; Remove-only.
pub fn betweenness_select(cfg: &BaselineConfig, adjacency: &Adjacency, spec: &AttackSpec) -> Result<ImmuneMask> {
    if cfg.scenario == Scenario::RemoveAdd {
        return Err(Error::UnsupportedScenario {
            method: "betweenness",
            scenario: "remove-add",
        });
    }
    if !adjacency.is_symmetric() {
        return Err(Error::Config("betweenness needs an undirected graph".into()));
    }
    let eb = edge_betweenness(adjacency);
    let scored: Vec<Scored> = (0..adjacency.num_nodes())
        .flat_map(|i| {
            let eb = &eb;
            adjacency.row(i).iter().enumerate().map(move |(p, &j)| (eb[i][p], i, j))
        })
        .filter(|&(_, i, j)| !spec.is_fixed(i, j))
        .collect();
    let mut mask = cfg.empty_mask(adjacency.num_nodes())?;
    fill(&mut mask, usize::MAX, rank(scored, false))?;
    Ok(mask)
}

/// Jaccard similarity of the neighbor labels of `i` and `j`.
pub fn bridgeness(adjacency: &Adjacency, labels: &[usize], i: usize, j: usize, options: BridgenessOptions) -> f64 {
    let counts = |t: usize| {
        let mut c: BTreeMap<usize, usize> = BTreeMap::new();
        let endpoint = options.include_endpoints.then_some(t);
        for u in adjacency.row(t).iter().copied().chain(endpoint) {
            *c.entry(labels[u]).or_default() += 1;
        }
        if !options.multiset {
            c.values_mut().for_each(|v| *v = 1);
        }
        c
    };
    let (a, b) = (counts(i), counts(j));
    let inter: usize = a.iter().map(|(l, &x)| x.min(b.get(l).copied().unwrap_or(0))).sum();
    let union: usize = a.values().sum::<usize>() + b.values().sum::<usize>() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Top non-fixed edges by neighbor-label similarity.
pub fn bridgeness_select(
    cfg: &BaselineConfig,
    adjacency: &Adjacency,
    spec: &AttackSpec,
    labels: &[usize],
) -> Result<ImmuneMask> {
    if labels.len() != adjacency.num_nodes() {
        return Err(Error::MissingLabels);
    }
    let scored: Vec<Scored> = fragile_edges(adjacency, spec)
        .into_iter()
        .map(|(i, j)| (bridgeness(adjacency, labels, i, j, cfg.bridgeness), i, j))
        .collect();
    let mut mask = cfg.empty_mask(adjacency.num_nodes())?;
    fill(&mut mask, usize::MAX, rank(scored, false))?;
    Ok(mask)
}
