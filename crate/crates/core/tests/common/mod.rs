//! Dense oracles and random instances shared by the integration tests.
#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;

use advimmune::certifier::{ClassPair, PerturbationDelta};
use advimmune::graph::{self, Adjacency, AttackSpec, Graph};
use advimmune::mask::ImmuneMask;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random spanning tree plus independent extra edges with probability `p`.
pub fn random_connected(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for k in 1..n {
        let parent = order[rng.random_range(0..k)];
        edges.push((order[k].min(parent), order[k].max(parent)));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Graph::from_undirected(n, &edges).unwrap()
}

pub fn random_logits(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |_, _| rng.random_range(-2.0..2.0))
}

/// `(1 - alpha) (I - alpha D^-1 A)^-1` by explicit inversion of a weighted adjacency.
pub fn dense_ppr(weights: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let n = weights.nrows();
    let mut p = weights.clone();
    for i in 0..n {
        let d: f64 = weights.row(i).sum();
        for j in 0..n {
            p[(i, j)] /= d;
        }
    }
    let m = DMatrix::identity(n, n) - p * alpha;
    m.try_inverse().expect("invertible") * (1.0 - alpha)
}

pub fn dense(adj: &Adjacency) -> DMatrix<f64> {
    let n = adj.num_nodes();
    let mut a = DMatrix::zeros(n, n);
    for (i, j) in adj.entries() {
        a[(i, j)] = 1.0;
    }
    a
}

/// `Pi (H[:, y] - H[:, k])` on a dense weighted graph.
pub fn dense_margins(weights: &DMatrix<f64>, logits: &DMatrix<f64>, y: usize, k: usize, alpha: f64) -> Vec<f64> {
    let gap = DVector::from_iterator(
        logits.nrows(),
        (0..logits.nrows()).map(|t| logits[(t, y)] - logits[(t, k)]),
    );
    (dense_ppr(weights, alpha) * gap).iter().copied().collect()
}

/// Worst margin of every node over all fragile subsets within the local budgets.
pub fn brute_force_margins(
    base: &Adjacency,
    fragile: &[(usize, usize)],
    local_budget: &[usize],
    logits: &DMatrix<f64>,
    pair: ClassPair,
    alpha: f64,
) -> Vec<f64> {
    let n = base.num_nodes();
    let a = dense(base);
    let mut best = vec![f64::INFINITY; n];
    for subset in 0u32..(1 << fragile.len()) {
        let mut per_row = vec![0usize; n];
        let mut w = a.clone();
        for (b, &(i, j)) in fragile.iter().enumerate() {
            if subset >> b & 1 == 1 {
                per_row[i] += 1;
                w[(i, j)] = 1.0 - w[(i, j)];
            }
        }
        if (0..n).any(|i| per_row[i] > local_budget[i] || w.row(i).sum() == 0.0) {
            continue;
        }
        for (b, m) in best.iter_mut().zip(dense_margins(&w, logits, pair.0, pair.1, alpha)) {
            *b = b.min(m);
        }
    }
    best
}

/// A random attack surface: MST fixed, up to `max_fragile` other entries fragile.
pub fn random_spec(
    rng: &mut ChaCha8Rng,
    g: &Graph,
    max_fragile: usize,
    max_budget: usize,
) -> (AttackSpec, Vec<(usize, usize)>) {
    let n = g.num_nodes();
    let tree = graph::minimum_spanning_tree(g).unwrap();
    let fixed = tree.directed();
    let mut open: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && !fixed.contains(&(i, j)))
        .collect();
    open.shuffle(rng);
    let count = rng.random_range(0..=max_fragile.min(open.len()));
    let mut fragile: Vec<(usize, usize)> = open[..count].to_vec();
    fragile.sort_unstable();
    let budgets: Vec<usize> = (0..n).map(|_| rng.random_range(0..=max_budget)).collect();
    (AttackSpec::custom(n, &fixed, &fragile, budgets).unwrap(), fragile)
}

/// Dense weighted adjacency `A + A' * C` for a real-valued mask `C` on the delta entries.
pub fn relaxed_weights(base: &Adjacency, delta: &PerturbationDelta, c: &BTreeMap<(usize, usize), f64>) -> DMatrix<f64> {
    let mut w = dense(base);
    for &(i, j, s) in delta.entries() {
        w[(i, j)] += f64::from(s) * c.get(&(i, j)).copied().unwrap_or(1.0);
    }
    w
}

/// `sum_t m_{y_t, k_t}(t)` on the relaxed graphs.
pub fn relaxed_objective(
    base: &Adjacency,
    deltas: &BTreeMap<ClassPair, PerturbationDelta>,
    c: &BTreeMap<(usize, usize), f64>,
    logits: &DMatrix<f64>,
    labels: &[usize],
    worst: &[usize],
    alpha: f64,
) -> f64 {
    let empty = PerturbationDelta::default();
    let mut by_pair: BTreeMap<ClassPair, Vec<usize>> = BTreeMap::new();
    for t in 0..labels.len() {
        by_pair.entry((labels[t], worst[t])).or_default().push(t);
    }
    by_pair
        .iter()
        .map(|(&(y, k), nodes)| {
            let w = relaxed_weights(base, deltas.get(&(y, k)).unwrap_or(&empty), c);
            let m = dense_margins(&w, logits, y, k, alpha);
            nodes.iter().map(|&t| m[t]).sum::<f64>()
        })
        .sum()
}

/// Mask values as reals: 0 for immunized support entries, 1 elsewhere.
pub fn mask_values(
    deltas: &BTreeMap<ClassPair, PerturbationDelta>,
    mask: &ImmuneMask,
) -> BTreeMap<(usize, usize), f64> {
    deltas
        .values()
        .flat_map(|d| {
            d.entries()
                .iter()
                .map(|&(i, j, _)| ((i, j), f64::from(mask.value(i, j))))
        })
        .collect()
}

pub type Check = Result<(), String>;

/// `ppr_full` against explicit inversion; rows sum to one.
pub fn check_ppr(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(2..=50);
    let p = r.random_range(0.0..0.3);
    let alpha = r.random_range(0.05..0.95);
    let g = random_connected(&mut r, n, p);
    let pi = advimmune::ppr::ppr_full(g.adjacency(), alpha).map_err(|e| e.to_string())?;
    let oracle = dense_ppr(&dense(g.adjacency()), alpha);
    for i in 0..n {
        let row: f64 = pi.matrix().row(i).sum();
        if (row - 1.0).abs() > 1e-8 {
            return Err(format!("seed {seed}: row {i} sums to {row}"));
        }
        for j in 0..n {
            let (a, b) = (pi.matrix()[(i, j)], oracle[(i, j)]);
            if (a - b).abs() > 1e-9 {
                return Err(format!("seed {seed}: entry ({i}, {j}) is {a}, oracle {b}"));
            }
        }
    }
    Ok(())
}

pub fn check_two_cycle(alpha: f64) -> Check {
    let g = Graph::from_undirected(2, &[(0, 1)]).unwrap();
    let pi = advimmune::ppr::ppr_full(g.adjacency(), alpha).map_err(|e| e.to_string())?;
    let expect = [1.0 / (1.0 + alpha), alpha / (1.0 + alpha)];
    for (i, j, e) in [
        (0, 0, expect[0]),
        (0, 1, expect[1]),
        (1, 1, expect[0]),
        (1, 0, expect[1]),
    ] {
        let got = pi.matrix()[(i, j)];
        if (got - e).abs() > 1e-12 {
            return Err(format!("alpha {alpha}: ({i}, {j}) is {got}, expected {e}"));
        }
    }
    Ok(())
}

/// Policy-iteration margins against exhaustive enumeration, for every class pair.
pub fn check_certifier(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(2..=7);
    let k = r.random_range(2..=3);
    let alpha = r.random_range(0.1..0.9);
    let g = random_connected(&mut r, n, 0.4);
    let (spec, fragile) = random_spec(&mut r, &g, 8, 3);
    let logits = random_logits(&mut r, n, k);
    let config = advimmune::AttackConfig {
        alpha,
        max_iterations: 200,
    };
    for pair in advimmune::certifier::class_pairs(k) {
        let got = advimmune::worst_case_attack(pair, &spec, &logits, g.adjacency(), None, &config)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let want = brute_force_margins(g.adjacency(), &fragile, spec.local_budget(), &logits, pair, alpha);
        for t in 0..n {
            if (got.margins[t] - want[t]).abs() > 1e-9 {
                return Err(format!(
                    "seed {seed}: pair {pair:?} node {t}: policy iteration {}, exhaustive {}",
                    got.margins[t], want[t]
                ));
            }
        }
    }
    Ok(())
}

/// Same comparison with a random subset of the fragile entries immunized.
pub fn check_certifier_frozen(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(2..=7);
    let alpha = r.random_range(0.1..0.9);
    let g = random_connected(&mut r, n, 0.4);
    let (spec, fragile) = random_spec(&mut r, &g, 8, 3);
    let logits = random_logits(&mut r, n, 2);
    let frozen: Vec<(usize, usize)> = fragile.iter().copied().filter(|_| r.random_bool(0.3)).collect();
    let mask = ImmuneMask::from_entries(n, &frozen).unwrap();
    let open: Vec<(usize, usize)> = fragile.iter().copied().filter(|e| !frozen.contains(e)).collect();
    let config = advimmune::AttackConfig {
        alpha,
        max_iterations: 200,
    };
    for pair in [(0, 1), (1, 0)] {
        let got = advimmune::worst_case_attack(pair, &spec, &logits, g.adjacency(), Some(&mask), &config)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let want = brute_force_margins(g.adjacency(), &open, spec.local_budget(), &logits, pair, alpha);
        for t in 0..n {
            if (got.margins[t] - want[t]).abs() > 1e-9 {
                return Err(format!(
                    "seed {seed}: frozen, node {t}: {} vs {}",
                    got.margins[t], want[t]
                ));
            }
        }
    }
    Ok(())
}

/// A certified random instance from one of the two scenarios.
pub struct Instance {
    pub graph: Graph,
    pub spec: AttackSpec,
    pub logits: DMatrix<f64>,
    pub alpha: f64,
    pub certificate: advimmune::Certificate,
}

pub fn random_instance(r: &mut ChaCha8Rng, max_nodes: usize) -> Instance {
    let n = r.random_range(3..=max_nodes);
    let k = r.random_range(2..=3);
    let alpha = r.random_range(0.5..0.9);
    let graph = random_connected(r, n, 0.3);
    let tree = graph::minimum_spanning_tree(&graph).unwrap();
    let scenario = if r.random_bool(0.5) {
        graph::Scenario::RemoveOnly
    } else {
        graph::Scenario::RemoveAdd
    };
    let spec = graph::build_attack_spec(&graph, &tree, scenario);
    let logits = random_logits(r, n, k);
    let config = advimmune::AttackConfig {
        alpha,
        max_iterations: 200,
    };
    let certificate = advimmune::certify(graph.adjacency(), &logits, &spec, None, &config).unwrap();
    Instance {
        graph,
        spec,
        logits,
        alpha,
        certificate,
    }
}

/// Analytic meta-gradient against central differences of the relaxed objective.
pub fn check_gradient(seed: u64) -> Check {
    let mut r = rng(seed);
    let inst = random_instance(&mut r, 12);
    let n = inst.graph.num_nodes();
    let base = inst.graph.adjacency();
    let deltas = &inst.certificate.deltas;
    let labels = &inst.certificate.predictions;
    let support: Vec<(usize, usize)> = mask_values(deltas, &ImmuneMask::unconstrained(n)).into_keys().collect();
    let frozen: Vec<(usize, usize)> = support.iter().copied().filter(|_| r.random_bool(0.25)).collect();
    let mask = ImmuneMask::from_entries(n, &frozen).unwrap();
    let worst: Vec<usize> = (0..n)
        .map(|t| advimmune::immunizer::worst_case_class(t, labels[t], base, deltas, &mask, &inst.logits, inst.alpha))
        .collect::<advimmune::Result<_>>()
        .map_err(|e| e.to_string())?;
    let grad = advimmune::immunizer::meta_gradient(base, deltas, &mask, &inst.logits, inst.alpha, labels, &worst)
        .map_err(|e| e.to_string())?;
    let c0 = mask_values(deltas, &mask);
    let eps = 1e-5;
    for (&key, &g) in &grad.entries {
        let mut plus = c0.clone();
        let mut minus = c0.clone();
        *plus.get_mut(&key).unwrap() += eps;
        *minus.get_mut(&key).unwrap() -= eps;
        let f = |c: &BTreeMap<(usize, usize), f64>| {
            relaxed_objective(base, deltas, c, &inst.logits, labels, &worst, inst.alpha)
        };
        let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
        if g == 0.0 && fd.abs() < 1e-9 {
            continue;
        }
        let rel = (g - fd).abs() / g.abs().max(fd.abs());
        if rel > 1e-4 {
            return Err(format!(
                "seed {seed}: entry {key:?}: analytic {g}, finite difference {fd}, rel {rel:.2e}"
            ));
        }
    }
    Ok(())
}

/// Immunizing one more entry never lowers a worst-case margin.
pub fn check_monotone(seed: u64) -> Check {
    let mut r = rng(seed);
    let inst = random_instance(&mut r, 10);
    let n = inst.graph.num_nodes();
    let base = inst.graph.adjacency();
    let support: Vec<(usize, usize)> = mask_values(&inst.certificate.deltas, &ImmuneMask::unconstrained(n))
        .into_keys()
        .collect();
    let config = advimmune::AttackConfig {
        alpha: inst.alpha,
        max_iterations: 200,
    };
    let mut chosen: Vec<(usize, usize)> = support.iter().copied().filter(|_| r.random_bool(0.2)).collect();
    let before = advimmune::certify(
        base,
        &inst.logits,
        &inst.spec,
        Some(&ImmuneMask::from_entries(n, &chosen).unwrap()),
        &config,
    )
    .map_err(|e| e.to_string())?;
    // any directed pair, on or off the support
    let extra = loop {
        let e = (r.random_range(0..n), r.random_range(0..n));
        if e.0 != e.1 && !chosen.contains(&e) {
            break e;
        }
    };
    chosen.push(extra);
    let after = advimmune::certify(
        base,
        &inst.logits,
        &inst.spec,
        Some(&ImmuneMask::from_entries(n, &chosen).unwrap()),
        &config,
    )
    .map_err(|e| e.to_string())?;
    for (pair, m0) in &before.pair_margins {
        let m1 = &after.pair_margins[pair];
        for t in 0..n {
            if m1[t] < m0[t] - 1e-10 {
                return Err(format!(
                    "seed {seed}: pair {pair:?} node {t}: {} -> {} after {extra:?}",
                    m0[t], m1[t]
                ));
            }
        }
    }
    for (a, b) in before.reports.iter().zip(&after.reports) {
        if b.worst_margin < a.worst_margin - 1e-10 {
            return Err(format!(
                "seed {seed}: node {} worst margin {} -> {}",
                a.node, a.worst_margin, b.worst_margin
            ));
        }
    }
    Ok(())
}

/// Clean predictions and diffused logits do not depend on the mask.
pub fn check_clean_invariance(seed: u64) -> Check {
    let mut r = rng(seed);
    let inst = random_instance(&mut r, 12);
    let n = inst.graph.num_nodes();
    let config = advimmune::AttackConfig {
        alpha: inst.alpha,
        max_iterations: 200,
    };
    let entries: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && r.random_bool(0.3))
        .collect();
    let mask = ImmuneMask::from_entries(n, &entries).unwrap();
    let eval = advimmune::evaluate_immunization(inst.graph.adjacency(), &inst.logits, &inst.spec, &mask, &config)
        .map_err(|e| e.to_string())?;
    let clean = &inst.certificate;
    if eval.certificate.predictions != clean.predictions {
        return Err(format!("seed {seed}: predictions differ under a mask"));
    }
    let same_bits = eval
        .certificate
        .clean_diffused
        .iter()
        .zip(clean.clean_diffused.iter())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    if !same_bits {
        return Err(format!("seed {seed}: clean diffused logits differ under a mask"));
    }
    Ok(())
}

/// Runs `f` for every seed and returns the first failure.
pub fn all_seeds(seeds: std::ops::Range<u64>, f: impl Fn(u64) -> Check) -> Check {
    seeds.into_iter().try_for_each(f)
}
