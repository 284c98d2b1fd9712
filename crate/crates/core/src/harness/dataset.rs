//! Dataset assembly: graph, labels, features, logits and split.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{DatasetConfig, ExperimentConfig, PlantedPartition};
use crate::error::{Error, Result};
use crate::graph::{self, Features, Graph};
use crate::logits::{self, LinearModel, Split, SplitAssignment};
use crate::ppr;

/// Where the logits came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogitsSource {
    File,
    Trained,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub logits: DMatrix<f64>,
    pub split: SplitAssignment,
    pub logits_source: LogitsSource,
    pub model: Option<LinearModel>,
}

impl Dataset {
    /// Ground-truth label where known, otherwise the clean prediction.
    pub fn label_classes(&self, predictions: &[usize]) -> Vec<usize> {
        self.graph
            .labels()
            .iter()
            .zip(predictions)
            .map(|(l, &p)| l.unwrap_or(p))
            .collect()
    }

    /// Nodes accuracy is reported on: the test split, or every labeled node without one.
    pub fn eval_mask(&self) -> Vec<bool> {
        let test = self.split.mask(Split::Test);
        if test.iter().any(|&t| t) {
            test
        } else {
            self.graph.labels().iter().map(Option::is_some).collect()
        }
    }
}

/// Samples a planted-partition graph; node `i` belongs to class `i * K / N`.
pub fn planted_partition(p: &PlantedPartition) -> Result<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let class = |i: usize| i * p.classes / p.nodes;
    let mut edges = Vec::new();
    for i in 0..p.nodes {
        for j in (i + 1)..p.nodes {
            let prob = if class(i) == class(j) { p.p_in } else { p.p_out };
            if rng.random_bool(prob) {
                edges.push((i, j));
            }
        }
    }
    if edges.is_empty() {
        return Err(Error::NoEdges);
    }
    let mut data = vec![0.0; p.nodes * p.feature_dim];
    for i in 0..p.nodes {
        for d in 0..p.feature_dim {
            let prob = if d % p.classes == class(i) {
                p.feature_p_in
            } else {
                p.feature_p_out
            };
            if rng.random_bool(prob) {
                data[i * p.feature_dim + d] = 1.0;
            }
        }
    }
    Graph::from_undirected(p.nodes, &edges)?
        .with_features(Features::new(p.nodes, p.feature_dim, data)?)?
        .with_labels((0..p.nodes).map(|i| Some(class(i))).collect())
}

/// Writes the largest component of a graph as `edges.tsv`, `labels.csv` and
/// `features.csv` under `dir`; isolated nodes cannot be expressed in an edge list.
pub fn write_dataset(graph: &Graph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let graph = &graph::largest_connected_component(graph);
    let ids = graph.original_ids();
    let mut edges = String::new();
    for (i, j) in graph.adjacency().undirected_edges() {
        edges.push_str(&format!("{}\t{}\n", ids[i], ids[j]));
    }
    std::fs::write(dir.join("edges.tsv"), edges)?;
    if graph.has_labels() {
        let mut w = csv::Writer::from_path(dir.join("labels.csv"))?;
        w.write_record(["node_id", "label"])?;
        for (i, l) in graph.labels().iter().enumerate() {
            if let Some(l) = l {
                w.write_record([ids[i].to_string(), l.to_string()])?;
            }
        }
        w.flush()?;
    }
    if let Some(x) = graph.features() {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(dir.join("features.csv"))?;
        for i in 0..x.num_nodes() {
            w.write_record(x.row(i).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
    }
    Ok(())
}

fn load_graph(cfg: &ExperimentConfig) -> Result<Graph> {
    let graph = match &cfg.dataset {
        DatasetConfig::Files {
            edges,
            labels,
            features,
            ..
        } => {
            let loaded = graph::load_edge_list(&cfg.resolve(edges))?;
            let mut g = loaded.graph;
            if let Some(l) = labels {
                g = g.load_labels(&cfg.resolve(l))?;
            }
            if let Some(f) = features {
                g = g.load_features(&cfg.resolve(f))?;
            }
            g
        }
        DatasetConfig::PlantedPartition(p) => planted_partition(p)?,
    };
    let lcc = graph::largest_connected_component(&graph);
    if lcc.num_nodes() < graph.num_nodes() {
        log::info!(
            "kept the largest connected component: {} of {} nodes",
            lcc.num_nodes(),
            graph.num_nodes()
        );
    }
    Ok(lcc)
}

/// Loads the graph and produces logits, training a linear model if no file is given.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let graph = load_graph(cfg)?;
    let n = graph.num_nodes();
    let (logits_path, split_path) = match &cfg.dataset {
        DatasetConfig::Files { logits, split, .. } => (logits.clone(), split.clone()),
        DatasetConfig::PlantedPartition(_) => (None, None),
    };
    let split = match &split_path {
        Some(p) => SplitAssignment::read_csv(&cfg.resolve(p), n)?,
        None => SplitAssignment::random(
            graph.labels(),
            cfg.train.train_fraction,
            cfg.train.val_fraction,
            cfg.train.seed,
        )?,
    };
    if let Some(p) = logits_path {
        let logits = logits::load_logits_for(&cfg.resolve(&p), n)?;
        return Ok(Dataset {
            graph,
            logits,
            split,
            logits_source: LogitsSource::File,
            model: None,
        });
    }
    if !graph.has_labels() {
        return Err(Error::MissingLabels);
    }
    let identity;
    let features = match graph.features() {
        Some(x) => x,
        None => {
            identity = logits::one_hot_features(n);
            &identity
        }
    };
    let model = logits::train_linear(
        features,
        graph.labels(),
        &split.mask(Split::Train),
        graph.num_classes(),
        &cfg.train,
    )?;
    let logits = model.logits(features);
    let train_acc = logits::accuracy(&ppr::predict(&logits), graph.labels(), &split.mask(Split::Train));
    log::info!("trained linear logits: train accuracy {train_acc:.4}");
    Ok(Dataset {
        graph,
        logits,
        split,
        logits_source: LogitsSource::Trained,
        model: Some(model),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_partition_is_seeded_and_assortative() {
        let p = PlantedPartition {
            nodes: 200,
            ..PlantedPartition::default()
        };
        let a = planted_partition(&p).unwrap();
        let b = planted_partition(&p).unwrap();
        assert_eq!(a.adjacency(), b.adjacency());
        let labels = a.labels();
        let same = a
            .adjacency()
            .undirected_edges()
            .iter()
            .filter(|&&(i, j)| labels[i] == labels[j])
            .count();
        assert!(same * 2 > a.num_edges(), "{same} of {}", a.num_edges());
        assert_eq!(a.num_classes(), 3);
        assert!(a.features().unwrap().is_binary());
    }

    #[test]
    fn written_dataset_loads_back() {
        let p = PlantedPartition {
            nodes: 60,
            p_in: 0.2,
            ..PlantedPartition::default()
        };
        let g = planted_partition(&p).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&g, dir.path()).unwrap();
        let mut cfg = ExperimentConfig::new(DatasetConfig::Files {
            edges: "edges.tsv".into(),
            labels: Some("labels.csv".into()),
            features: Some("features.csv".into()),
            logits: None,
            split: None,
        });
        cfg.base_dir = dir.path().to_path_buf();
        cfg.train.epochs = 5;
        let d = load_dataset(&cfg).unwrap();
        let lcc = graph::largest_connected_component(&g);
        assert_eq!(d.graph.adjacency(), lcc.adjacency());
        assert_eq!(d.logits.nrows(), lcc.num_nodes());
        assert_eq!(d.logits_source, LogitsSource::Trained);
    }
}
