//! Raw logits `H`: CSV ingestion, a one-layer softmax trainer and accuracy.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certifier::{ClassPair, MarginReport, PerturbationDelta};
use crate::error::{Error, Result};
use crate::exec;
use crate::graph::{Adjacency, Features};
use crate::immunizer::modified_adjacency;
use crate::mask::ImmuneMask;
use crate::ppr::{self, DiffusionOperator};

/// Reads an `N x K` logits file; `#` lines are comments and there is no header.
pub fn load_logits(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: record.position().map_or(line + 1, |p| p.line() as usize),
            message,
        };
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(bad(format!(
                "expected {} columns, found {}",
                cols.unwrap(),
                record.len()
            )));
        }
        for field in &record {
            data.push(field.parse::<f64>().map_err(|_| bad(format!("bad number {field:?}")))?);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    if cols < 2 {
        return Err(Error::TooFewClasses(cols));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// [`load_logits`] with the row count checked against the graph.
pub fn load_logits_for(path: &Path, num_nodes: usize) -> Result<DMatrix<f64>> {
    let h = load_logits(path)?;
    if h.nrows() != num_nodes {
        return Err(Error::Shape(format!(
            "{} has {} rows for {num_nodes} nodes",
            path.display(),
            h.nrows()
        )));
    }
    Ok(h)
}

/// Writes logits with shortest round-trip formatting, so reloading is bit-identical.
pub fn save_logits(path: &Path, logits: &DMatrix<f64>, header: Option<&str>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    if let Some(h) = header {
        std::io::Write::write_all(&mut file, format!("# {h}\n").as_bytes())?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    for i in 0..logits.nrows() {
        w.write_record(logits.row(i).iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Split membership per node; unlabeled nodes are in no split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    splits: Vec<Option<Split>>,
}

impl SplitAssignment {
    pub fn new(splits: Vec<Option<Split>>) -> Self {
        Self { splits }
    }

    /// Seeded shuffle of labeled nodes into train, val and the rest test.
    pub fn random(labels: &[Option<usize>], train: f64, val: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&val) || train + val > 1.0 {
            return Err(Error::Config(format!("bad split fractions {train}, {val}")));
        }
        let mut labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
        labeled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (train * labeled.len() as f64).floor() as usize;
        let n_val = (val * labeled.len() as f64).floor() as usize;
        let mut splits = vec![None; labels.len()];
        for (rank, &i) in labeled.iter().enumerate() {
            splits[i] = Some(if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
        Ok(Self { splits })
    }

    pub fn get(&self, i: usize) -> Option<Split> {
        self.splits[i]
    }

    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    pub fn mask(&self, split: Split) -> Vec<bool> {
        self.splits.iter().map(|s| *s == Some(split)).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["node", "split"])?;
        for (i, s) in self.splits.iter().enumerate() {
            if let Some(s) = s {
                w.write_record([i.to_string(), s.as_str().to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, num_nodes: usize) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let mut splits = vec![None; num_nodes];
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let bad = |m: &str| Error::Parse {
                path: path.to_path_buf(),
                line: line + 2,
                message: m.to_string(),
            };
            let node: usize = record
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .filter(|&n| n < num_nodes)
                .ok_or_else(|| bad("bad node"))?;
            let split = match record.get(1).map(str::trim) {
                Some("train") => Split::Train,
                Some("val") => Split::Val,
                Some("test") => Split::Test,
                _ => return Err(bad("split must be train, val or test")),
            };
            splits[node] = Some(split);
        }
        Ok(Self { splits })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            epochs: 300,
            l2: 5e-4,
            train_fraction: 0.1,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// `H = X W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: DMatrix<f64>,
    pub bias: Vec<f64>,
    /// Training loss at initialization and after every accepted step.
    pub loss_trace: Vec<f64>,
}

impl LinearModel {
    pub fn logits(&self, features: &Features) -> DMatrix<f64> {
        let (n, k) = (features.num_nodes(), self.bias.len());
        let mut h = DMatrix::zeros(n, k);
        for i in 0..n {
            let x = features.row(i);
            for c in 0..k {
                h[(i, c)] = self.bias[c]
                    + x.iter()
                        .enumerate()
                        .map(|(d, xd)| xd * self.weights[(d, c)])
                        .sum::<f64>();
            }
        }
        h
    }
}

/// Mean softmax cross-entropy over `train` plus `l2 / 2 * |W|^2`, with gradients.
pub fn loss_and_gradient(
    features: &Features,
    labels: &[Option<usize>],
    train: &[bool],
    weights: &DMatrix<f64>,
    bias: &[f64],
    l2: f64,
) -> (f64, DMatrix<f64>, Vec<f64>) {
    let k = bias.len();
    let nodes: Vec<(usize, usize)> = (0..features.num_nodes())
        .filter(|&i| train[i])
        .filter_map(|i| labels[i].map(|y| (i, y)))
        .collect();
    let mut grad_w = weights * l2;
    let mut grad_b = vec![0.0; k];
    let mut loss = 0.5 * l2 * weights.norm_squared();
    if nodes.is_empty() {
        return (loss, grad_w, grad_b);
    }
    let scale = 1.0 / nodes.len() as f64;
    let mut z = vec![0.0; k];
    for &(i, y) in &nodes {
        let x = features.row(i);
        for (c, zc) in z.iter_mut().enumerate() {
            *zc = bias[c] + x.iter().enumerate().map(|(d, xd)| xd * weights[(d, c)]).sum::<f64>();
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = z.iter().map(|zc| (zc - max).exp()).sum::<f64>().ln() + max;
        loss += scale * (log_sum - z[y]);
        for c in 0..k {
            let g = scale * ((z[c] - log_sum).exp() - f64::from(u8::from(c == y)));
            grad_b[c] += g;
            for (d, &xd) in x.iter().enumerate() {
                if xd != 0.0 {
                    grad_w[(d, c)] += g * xd;
                }
            }
        }
    }
    (loss, grad_w, grad_b)
}

/// Full-batch gradient descent with step halving whenever the loss would rise.
pub fn train_linear(
    features: &Features,
    labels: &[Option<usize>],
    train: &[bool],
    num_classes: usize,
    config: &TrainConfig,
) -> Result<LinearModel> {
    if num_classes < 2 {
        return Err(Error::TooFewClasses(num_classes));
    }
    if labels.len() != features.num_nodes() || train.len() != features.num_nodes() {
        return Err(Error::Shape("labels, train mask and features disagree".into()));
    }
    if labels.iter().flatten().any(|&y| y >= num_classes) {
        return Err(Error::Shape(format!("label outside {num_classes} classes")));
    }
    let dim = features.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let limit = (6.0 / (dim + num_classes) as f64).sqrt();
    let mut weights = DMatrix::from_fn(dim, num_classes, |_, _| rng.random_range(-limit..limit));
    let mut bias = vec![0.0; num_classes];
    let (mut loss, mut grad_w, mut grad_b) = loss_and_gradient(features, labels, train, &weights, &bias, config.l2);
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("initial loss {loss}")));
    }
    let mut loss_trace = vec![loss];
    let mut lr = config.learning_rate;
    const LR_FLOOR: f64 = 1e-12;
    for _ in 0..config.epochs {
        loop {
            let trial_w = &weights - &grad_w * lr;
            let trial_b: Vec<f64> = bias.iter().zip(&grad_b).map(|(b, g)| b - lr * g).collect();
            let (l, gw, gb) = loss_and_gradient(features, labels, train, &trial_w, &trial_b, config.l2);
            if l.is_finite() && l <= loss {
                (weights, bias, loss, grad_w, grad_b) = (trial_w, trial_b, l, gw, gb);
                break;
            }
            lr *= 0.5;
            if lr < LR_FLOOR {
                return Err(Error::Divergence(format!(
                    "loss {loss} does not decrease with step size {LR_FLOOR}"
                )));
            }
        }
        loss_trace.push(loss);
    }
    Ok(LinearModel {
        weights,
        bias,
        loss_trace,
    })
}

/// Identity features for graphs without attributes.
pub fn one_hot_features(num_nodes: usize) -> Features {
    let mut data = vec![0.0; num_nodes * num_nodes];
    for i in 0..num_nodes {
        data[i * num_nodes + i] = 1.0;
    }
    Features::new(num_nodes, num_nodes, data).expect("square identity")
}

/// Fraction of masked labeled nodes predicted correctly; 0 when none are masked.
pub fn accuracy(predictions: &[usize], labels: &[Option<usize>], mask: &[bool]) -> f64 {
    let mut total = 0usize;
    let mut correct = 0usize;
    for ((&p, l), &m) in predictions.iter().zip(labels).zip(mask) {
        if let (true, Some(y)) = (m, l) {
            total += 1;
            correct += usize::from(p == *y);
        }
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Which perturbed graph a node is classified on under attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackGraph {
    /// Node `t` sees the worst-case graph of its own pair `(y_t, k_t)`.
    #[default]
    PerNode,
    /// Every node sees the one pair graph that minimizes accuracy.
    GlobalWorstPair,
}

/// Accuracy on the masked nodes when each is classified on a worst-case graph.
#[allow(clippy::too_many_arguments)]
pub fn accuracy_under_attack(
    base: &Adjacency,
    logits: &DMatrix<f64>,
    alpha: f64,
    deltas: &BTreeMap<ClassPair, PerturbationDelta>,
    mask: Option<&ImmuneMask>,
    reports: &[MarginReport],
    labels: &[Option<usize>],
    eval: &[bool],
    mode: AttackGraph,
) -> Result<f64> {
    let n = base.num_nodes();
    if reports.len() != n || labels.len() != n || eval.len() != n {
        return Err(Error::Shape("reports, labels and mask must cover every node".into()));
    }
    let open = ImmuneMask::unconstrained(n);
    let mask = mask.unwrap_or(&open);
    let pairs: Vec<ClassPair> = match mode {
        AttackGraph::PerNode => {
            let mut p: Vec<ClassPair> = reports.iter().map(|r| (r.label_class, r.worst_class)).collect();
            p.sort_unstable();
            p.dedup();
            p
        }
        AttackGraph::GlobalWorstPair => deltas.keys().copied().collect(),
    };
    let empty = PerturbationDelta::default();
    let predictions: Vec<Result<Vec<usize>>> = exec::map_slice(&pairs, |pair| {
        let adj = modified_adjacency(base, deltas.get(pair).unwrap_or(&empty), mask)?;
        let op = DiffusionOperator::new(adj, alpha)?;
        Ok(ppr::predict(&ppr::diffused_logits(&op, logits)?))
    });
    let predictions = predictions.into_iter().collect::<Result<Vec<_>>>()?;
    match mode {
        AttackGraph::PerNode => {
            let index: BTreeMap<ClassPair, usize> = pairs.iter().enumerate().map(|(s, &p)| (p, s)).collect();
            let attacked: Vec<usize> = reports
                .iter()
                .map(|r| predictions[index[&(r.label_class, r.worst_class)]][r.node])
                .collect();
            Ok(accuracy(&attacked, labels, eval))
        }
        AttackGraph::GlobalWorstPair => Ok(predictions
            .iter()
            .map(|p| accuracy(p, labels, eval))
            .fold(f64::INFINITY, f64::min)
            .min(1.0)),
    }
}
