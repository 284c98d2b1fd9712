//! Subcommands: certify, immunize, baseline, analyze, report, train.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, RunMethod, VERSION};
use super::dataset::{load_dataset, Dataset, LogitsSource};
use crate::baselines::{self, BaselineConfig, BaselineInput, Method};
use crate::certifier::{certify, AttackConfig, Certificate};
use crate::error::{Error, Result};
use crate::graph::{self, Adjacency, AttackSpec, Scenario, SpanningTree};
use crate::immunizer::{evaluate_immunization, greedy_immunize, Evaluation, Immunization, ImmunizeOptions};
use crate::logits::{self, Split};
use crate::mask::ImmuneMask;
use crate::ppr;

/// A loaded dataset with its attack surface.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub tree: SpanningTree,
    pub spec: AttackSpec,
    pub attack: AttackConfig,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    let tree = graph::minimum_spanning_tree(&dataset.graph)?;
    let spec = graph::build_attack_spec_with(&dataset.graph, &tree, config.scenario, config.attack_rule());
    Ok(Prepared {
        config: config.clone(),
        dataset,
        tree,
        spec,
        attack: AttackConfig {
            alpha: config.alpha,
            max_iterations: config.max_iterations,
        },
    })
}

impl Prepared {
    pub fn adjacency(&self) -> &Adjacency {
        self.dataset.graph.adjacency()
    }

    pub fn num_nodes(&self) -> usize {
        self.dataset.graph.num_nodes()
    }

    /// Immune budgets of the config as entry counts.
    pub fn budgets(&self) -> Vec<usize> {
        let g = &self.dataset.graph;
        self.config
            .immune_budget
            .budgets()
            .into_iter()
            .map(|b| b.resolve(self.config.scenario, g.num_nodes(), g.num_edges()))
            .collect()
    }

    pub fn immune_local_budget(&self) -> Vec<Option<usize>> {
        self.config.immune_rule().apply(&self.dataset.graph.degrees())
    }

    pub fn empty_mask(&self, budget: usize) -> Result<ImmuneMask> {
        ImmuneMask::new(self.num_nodes(), budget, self.immune_local_budget())
    }

    /// Clean-graph predictions without running the attack.
    pub fn clean_predictions(&self) -> Result<Vec<usize>> {
        let op = ppr::DiffusionOperator::new(self.adjacency().clone(), self.attack.alpha)?;
        Ok(ppr::predict(&ppr::diffused_logits(&op, &self.dataset.logits)?))
    }

    pub fn certify(&self) -> Result<Certificate> {
        certify(self.adjacency(), &self.dataset.logits, &self.spec, None, &self.attack)
    }

    pub fn evaluate(&self, mask: &ImmuneMask) -> Result<Evaluation> {
        evaluate_immunization(self.adjacency(), &self.dataset.logits, &self.spec, mask, &self.attack)
    }

    /// Greedy meta-gradient immunization from the clean certificate's deltas.
    pub fn advimmune(&self, clean: &Certificate, budget: usize) -> Result<Immunization> {
        greedy_immunize(
            self.adjacency(),
            &self.dataset.logits,
            self.attack.alpha,
            &clean.predictions,
            &clean.deltas,
            self.empty_mask(budget)?,
            ImmunizeOptions {
                symmetric: self.config.symmetric,
            },
        )
    }

    pub fn baseline_mask(&self, method: Method, seed: u64, budget: usize, clean: &Certificate) -> Result<ImmuneMask> {
        let mut cfg =
            BaselineConfig::new(method, self.config.scenario, budget, self.immune_local_budget()).with_seed(seed);
        cfg.bridgeness = self.config.bridgeness;
        let labels = self.dataset.label_classes(&clean.predictions);
        let input = BaselineInput {
            adjacency: self.adjacency(),
            spec: &self.spec,
            features: self.dataset.graph.features(),
            labels: Some(&labels),
            deltas: Some(&clean.deltas),
        };
        baselines::select(&cfg, &input)
    }

    pub fn clean_accuracy(&self, cert: &Certificate) -> f64 {
        logits::accuracy(
            &cert.predictions,
            self.dataset.graph.labels(),
            &self.dataset.eval_mask(),
        )
    }

    /// Accuracy on the clean-graph surrogate attack, with `mask` protecting its entries.
    pub fn attacked_accuracy(&self, clean: &Certificate, mask: Option<&ImmuneMask>, eval: &Certificate) -> Result<f64> {
        logits::accuracy_under_attack(
            self.adjacency(),
            &self.dataset.logits,
            self.attack.alpha,
            &clean.deltas,
            mask,
            &eval.reports,
            self.dataset.graph.labels(),
            &self.dataset.eval_mask(),
            self.config.accuracy_graph,
        )
    }

    fn header(&self) -> String {
        self.config.header(self.config.train.seed)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.config.out_dir();
        std::fs::create_dir_all(&dir)?;
        let mut stamped = serde_json::to_value(&self.config)?;
        stamped["config_hash"] = self.config.hash().into();
        stamped["version"] = VERSION.into();
        write_json(&dir.join("config.json"), &stamped)?;
        Ok(dir)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// `(x - base) / base`, undefined for a zero base.
pub fn improvement(x: f64, base: f64) -> Option<f64> {
    (base != 0.0).then(|| (x - base) / base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifySummary {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub scenario: Scenario,
    pub method: String,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_classes: usize,
    pub num_robust: usize,
    pub robust_ratio: f64,
    pub mean_worst_margin: f64,
    pub budget_used: usize,
    pub clean_accuracy: f64,
    pub attacked_accuracy: f64,
    pub logits_source: String,
}

/// Certify every node; writes certificates, deltas, the id map and a summary.
pub fn cmd_certify(config: &ExperimentConfig) -> Result<CertifySummary> {
    let p = prepare(config)?;
    let dir = p.out_dir()?;
    let cert = p.certify()?;
    let header = p.header();
    cert.write_reports(&dir.join("certificates.csv"), &header)?;
    cert.write_deltas(&dir.join("deltas.csv"), &header)?;
    p.dataset.graph.write_id_map(&dir.join("id_map.csv"))?;
    if p.dataset.logits_source == LogitsSource::Trained {
        logits::save_logits(&dir.join("logits.csv"), &p.dataset.logits, Some(&header))?;
        p.dataset.split.write_csv(&dir.join("split.csv"))?;
    }
    let g = &p.dataset.graph;
    let summary = CertifySummary {
        version: VERSION.into(),
        config_hash: config.hash(),
        seed: config.train.seed,
        scenario: config.scenario,
        method: RunMethod::NoDefense.to_string(),
        num_nodes: g.num_nodes(),
        num_edges: g.num_edges(),
        num_classes: p.dataset.logits.ncols(),
        num_robust: cert.num_robust(),
        robust_ratio: cert.robust_ratio(),
        mean_worst_margin: cert.mean_worst_margin(),
        budget_used: 0,
        clean_accuracy: p.clean_accuracy(&cert),
        attacked_accuracy: p.attacked_accuracy(&cert, None, &cert)?,
        logits_source: match p.dataset.logits_source {
            LogitsSource::File => "file".into(),
            LogitsSource::Trained => "trained".into(),
        },
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub num_robust: usize,
    pub robust_ratio: f64,
    pub mean_worst_margin: f64,
    pub budget_used: usize,
    pub attacked_accuracy: f64,
}

/// One budget of a sweep, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub budget: String,
    pub budget_entries: usize,
    pub budget_used: f64,
    pub robust_ratio: f64,
    pub robust_ratio_std: f64,
    pub mean_worst_margin: f64,
    pub mean_worst_margin_std: f64,
    pub improvement: Option<f64>,
    pub clean_accuracy: f64,
    pub attacked_accuracy: f64,
    pub per_seed: Vec<SeedMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub scenario: Scenario,
    pub method: String,
    pub no_defense_robust_ratio: f64,
    pub no_defense_mean_worst_margin: f64,
    /// Values at the last budget of the sweep.
    pub robust_ratio: f64,
    pub mean_worst_margin: f64,
    pub budget_used: f64,
    pub improvement: Option<f64>,
    pub runs: Vec<RunMetrics>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(budget: String, entries: usize, base: f64, clean_accuracy: f64, per_seed: Vec<SeedMetrics>) -> RunMetrics {
    let pick = |f: fn(&SeedMetrics) -> f64| per_seed.iter().map(f).collect::<Vec<_>>();
    let (rr, rr_std) = mean_std(&pick(|s| s.robust_ratio));
    let (mw, mw_std) = mean_std(&pick(|s| s.mean_worst_margin));
    RunMetrics {
        budget,
        budget_entries: entries,
        budget_used: mean_std(&pick(|s| s.budget_used as f64)).0,
        robust_ratio: rr,
        robust_ratio_std: rr_std,
        mean_worst_margin: mw,
        mean_worst_margin_std: mw_std,
        improvement: improvement(rr, base),
        clean_accuracy,
        attacked_accuracy: mean_std(&pick(|s| s.attacked_accuracy)).0,
        per_seed,
    }
}

fn seed_metrics(p: &Prepared, clean: &Certificate, seed: u64, mask: &ImmuneMask) -> Result<SeedMetrics> {
    let eval = p.evaluate(mask)?;
    Ok(SeedMetrics {
        seed,
        num_robust: eval.certificate.num_robust(),
        robust_ratio: eval.robust_ratio,
        mean_worst_margin: eval.mean_worst_margin,
        budget_used: eval.budget_used,
        attacked_accuracy: p.attacked_accuracy(clean, Some(mask), &eval.certificate)?,
    })
}

fn finish_metrics(p: &Prepared, method: RunMethod, clean: &Certificate, runs: Vec<RunMetrics>) -> Metrics {
    let last = runs.last().expect("at least one budget");
    Metrics {
        version: VERSION.into(),
        config_hash: p.config.hash(),
        seed: p.config.train.seed,
        seeds: match method {
            RunMethod::Baseline(m) if m.is_randomized() => p.config.seeds.clone(),
            _ => vec![p.config.train.seed],
        },
        scenario: p.config.scenario,
        method: method.to_string(),
        no_defense_robust_ratio: clean.robust_ratio(),
        no_defense_mean_worst_margin: clean.mean_worst_margin(),
        robust_ratio: last.robust_ratio,
        mean_worst_margin: last.mean_worst_margin,
        budget_used: last.budget_used,
        improvement: last.improvement,
        runs,
    }
}

fn write_sweep(path: &Path, header: &str, runs: &[RunMetrics]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    std::io::Write::write_all(&mut file, format!("# {header}\n").as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "budget",
        "budget_entries",
        "budget_used",
        "robust_ratio",
        "robust_ratio_std",
        "mean_worst_margin",
        "improvement",
    ])?;
    for r in runs {
        w.write_record([
            r.budget.clone(),
            r.budget_entries.to_string(),
            r.budget_used.to_string(),
            r.robust_ratio.to_string(),
            r.robust_ratio_std.to_string(),
            r.mean_worst_margin.to_string(),
            r.improvement.map_or_else(String::new, |x| x.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Greedy immunization over the budget sweep, evaluated by re-certification.
///
/// One greedy run at the largest budget serves every smaller budget, since
/// greedy selections at budget `C` are the first `C` selections of any larger run.
pub fn cmd_immunize(config: &ExperimentConfig) -> Result<Metrics> {
    let p = prepare(config)?;
    let dir = p.out_dir()?;
    let clean = p.certify()?;
    let (runs, full) = advimmune_sweep(&p, &clean)?;
    let header = p.header();
    full.mask.write_csv(&dir.join("mask.csv"), &header, None)?;
    write_sweep(&dir.join("sweep.csv"), &header, &runs)?;
    let metrics = finish_metrics(&p, RunMethod::AdvImmune, &clean, runs);
    write_json(&dir.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

/// Evaluates the greedy immunizer at each configured budget.
pub fn advimmune_sweep(p: &Prepared, clean: &Certificate) -> Result<(Vec<RunMetrics>, Immunization)> {
    let budgets = p.budgets();
    let max = budgets.iter().copied().max().unwrap_or(0);
    let full = p.advimmune(clean, max)?;
    let labels = p.config.immune_budget.budgets();
    let clean_accuracy = p.clean_accuracy(clean);
    let runs = budgets
        .iter()
        .zip(&labels)
        .map(|(&c, label)| {
            let mask = full.mask.prefix(c);
            let m = seed_metrics(p, clean, p.config.train.seed, &mask)?;
            Ok(aggregate(
                label.to_string(),
                c,
                clean.robust_ratio(),
                clean_accuracy,
                vec![m],
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((runs, full))
}

fn write_masks(path: &Path, header: &str, method: Method, masks: &[(u64, ImmuneMask)]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    std::io::Write::write_all(&mut file, format!("# {header}\n").as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["method", "seed", "round", "src", "dst", "value"])?;
    for (seed, mask) in masks {
        for s in mask.trace() {
            w.write_record([
                method.to_string(),
                seed.to_string(),
                s.round.to_string(),
                s.src.to_string(),
                s.dst.to_string(),
                s.value.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Baseline selector over the budget sweep; randomized methods run every seed.
pub fn cmd_baseline(config: &ExperimentConfig) -> Result<Metrics> {
    let RunMethod::Baseline(method) = config.method else {
        return Err(Error::Config(format!("{} is not a baseline method", config.method)));
    };
    let p = prepare(config)?;
    let dir = p.out_dir()?;
    let clean = p.certify()?;
    let header = p.header();
    let mut runs = Vec::new();
    for (c, label) in p.budgets().into_iter().zip(config.immune_budget.budgets()) {
        let (masks, per_seed) = baseline_run(&p, &clean, method, c)?;
        write_masks(&dir.join(format!("mask_{method}_C{c}.csv")), &header, method, &masks)?;
        runs.push(aggregate(
            label.to_string(),
            c,
            clean.robust_ratio(),
            p.clean_accuracy(&clean),
            per_seed,
        ));
    }
    write_sweep(&dir.join("sweep.csv"), &header, &runs)?;
    let metrics = finish_metrics(&p, config.method, &clean, runs);
    write_json(&dir.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

pub type SeedMasks = Vec<(u64, ImmuneMask)>;

/// Masks and metrics of one baseline at one budget, per seed.
pub fn baseline_run(
    p: &Prepared,
    clean: &Certificate,
    method: Method,
    budget: usize,
) -> Result<(SeedMasks, Vec<SeedMetrics>)> {
    let seeds = if method.is_randomized() {
        p.config.seeds.clone()
    } else {
        vec![p.config.seeds[0]]
    };
    let mut masks = Vec::new();
    let mut per_seed = Vec::new();
    for seed in seeds {
        let mask = p.baseline_mask(method, seed, budget, clean)?;
        per_seed.push(seed_metrics(p, clean, seed, &mask)?);
        masks.push((seed, mask));
    }
    Ok((masks, per_seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub set: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub num_edges: usize,
    pub num_immune_pairs: usize,
    pub num_immune_edges: usize,
    pub all_same_label_fraction: f64,
    pub immune_same_label_fraction: Option<f64>,
    pub betweenness: Vec<HistogramBin>,
    pub similarity: Vec<HistogramBin>,
}

/// Equal-width bins over `[lo, hi]` of `all`; the top edge falls in the last bin.
pub fn histogram(set: &str, values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<HistogramBin> {
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let total = values.len();
    counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistogramBin {
            set: set.to_string(),
            lo: lo + width * b as f64,
            hi: lo + width * (b + 1) as f64,
            count,
            fraction: if total == 0 { 0.0 } else { count as f64 / total as f64 },
        })
        .collect()
}

fn write_histogram(path: &Path, header: &str, bins: &[HistogramBin]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    std::io::Write::write_all(&mut file, format!("# {header}\n").as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    for b in bins {
        w.serialize(b)?;
    }
    w.flush()?;
    Ok(())
}

/// Distribution of immune pairs against all edges on edge betweenness,
/// feature similarity and label agreement.
///
/// Directed immune entries are merged into unordered pairs; betweenness is
/// only defined for pairs that are clean edges.
pub fn cmd_analyze(config: &ExperimentConfig, mask_path: &Path) -> Result<Analysis> {
    let p = prepare(config)?;
    let dir = p.out_dir()?;
    let mask = ImmuneMask::read_csv(mask_path, p.num_nodes())?;
    let adj = p.adjacency();
    let clean = p.clean_predictions()?;
    let labels = p.dataset.label_classes(&clean);
    let edges = adj.undirected_edges();
    let pairs: Vec<(usize, usize)> = mask
        .entries()
        .map(|(i, j)| (i.min(j), i.max(j)))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let immune_edges: Vec<(usize, usize)> = pairs.iter().copied().filter(|&(i, j)| adj.has_edge(i, j)).collect();

    let eb = baselines::edge_betweenness(adj);
    let eb_of = |&(i, j): &(usize, usize)| eb[i][adj.row(i).binary_search(&j).expect("edge")];
    let all_eb: Vec<f64> = edges.iter().map(eb_of).collect();
    let imm_eb: Vec<f64> = immune_edges.iter().map(eb_of).collect();
    let max_eb = all_eb.iter().copied().fold(0.0, f64::max);
    let bins = config.histogram_bins;
    let mut betweenness = histogram("all", &all_eb, 0.0, max_eb, bins);
    betweenness.extend(histogram("immune", &imm_eb, 0.0, max_eb, bins));

    let mut similarity = Vec::new();
    if let Some(x) = p.dataset.graph.features() {
        let sim = |&(i, j): &(usize, usize)| baselines::cosine(x.row(i), x.row(j));
        similarity = histogram("all", &edges.iter().map(sim).collect::<Vec<_>>(), 0.0, 1.0, bins);
        similarity.extend(histogram(
            "immune",
            &pairs.iter().map(sim).collect::<Vec<_>>(),
            0.0,
            1.0,
            bins,
        ));
    }

    let same = |set: &[(usize, usize)]| {
        (!set.is_empty())
            .then(|| set.iter().filter(|&&(i, j)| labels[i] == labels[j]).count() as f64 / set.len() as f64)
    };
    let header = p.header();
    write_histogram(&dir.join("betweenness_hist.csv"), &header, &betweenness)?;
    if !similarity.is_empty() {
        write_histogram(&dir.join("similarity_hist.csv"), &header, &similarity)?;
    }
    let analysis = Analysis {
        version: VERSION.into(),
        config_hash: config.hash(),
        seed: config.train.seed,
        num_edges: edges.len(),
        num_immune_pairs: pairs.len(),
        num_immune_edges: immune_edges.len(),
        all_same_label_fraction: same(&edges).unwrap_or(0.0),
        immune_same_label_fraction: same(&pairs),
        betweenness,
        similarity,
    };
    let mut file = std::fs::File::create(dir.join("label_similarity.csv"))?;
    std::io::Write::write_all(&mut file, format!("# {header}\n").as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["set", "pairs", "same_label_fraction"])?;
    w.write_record([
        "all".to_string(),
        edges.len().to_string(),
        analysis.all_same_label_fraction.to_string(),
    ])?;
    w.write_record([
        "immune".to_string(),
        pairs.len().to_string(),
        analysis
            .immune_same_label_fraction
            .map_or_else(String::new, |f| f.to_string()),
    ])?;
    w.flush()?;
    write_json(&dir.join("analysis.json"), &analysis)?;
    Ok(analysis)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub method: String,
    pub scenario: String,
    pub budget: String,
    pub budget_used: f64,
    pub robust_ratio: f64,
    pub robust_ratio_std: f64,
    pub base_ratio: f64,
    pub improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub incomplete: Vec<String>,
}

fn run_rows(name: &str, dir: &Path) -> Option<Vec<ReportRow>> {
    let read = |f: &str| -> Option<serde_json::Value> {
        serde_json::from_str(&std::fs::read_to_string(dir.join(f)).ok()?).ok()
    };
    if let Some(m) = read("metrics.json") {
        let base = m["no_defense_robust_ratio"].as_f64()?;
        let mut rows = Vec::new();
        for r in m["runs"].as_array()? {
            let x = r["robust_ratio"].as_f64()?;
            rows.push(ReportRow {
                run: name.to_string(),
                method: m["method"].as_str()?.to_string(),
                scenario: m["scenario"].as_str()?.to_string(),
                budget: r["budget"].as_str()?.to_string(),
                budget_used: r["budget_used"].as_f64()?,
                robust_ratio: x,
                robust_ratio_std: r["robust_ratio_std"].as_f64()?,
                base_ratio: base,
                improvement: improvement(x, base),
            });
        }
        return Some(rows);
    }
    let s = read("summary.json")?;
    let x = s["robust_ratio"].as_f64()?;
    Some(vec![ReportRow {
        run: name.to_string(),
        method: s["method"].as_str()?.to_string(),
        scenario: s["scenario"].as_str()?.to_string(),
        budget: "0".into(),
        budget_used: 0.0,
        robust_ratio: x,
        robust_ratio_std: 0.0,
        base_ratio: x,
        improvement: improvement(x, x),
    }])
}

/// Collects every run below `dir` (a directory holding `config.json`) into
/// `report.csv` and `report.txt`; runs without readable metrics are listed as incomplete.
pub fn cmd_report(dir: &Path) -> Result<Report> {
    let mut runs: Vec<(String, PathBuf)> = Vec::new();
    if dir.join("config.json").is_file() {
        runs.push((".".into(), dir.to_path_buf()));
    }
    let mut children: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("config.json").is_file())
        .collect();
    children.sort();
    for c in children {
        let name = c
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        runs.push((name, c));
    }
    let mut report = Report::default();
    for (name, path) in &runs {
        match run_rows(name, path) {
            Some(rows) => report.rows.extend(rows),
            None => report.incomplete.push(name.clone()),
        }
    }

    let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let fmt_imp = |i: Option<f64>| i.map_or_else(|| "n/a".to_string(), |x| format!("{:+.2}%", 100.0 * x));
    let mut text = format!(
        "{:<20} {:<14} {:<12} {:>8} {:>10} {:>14} {:>12}\n",
        "run", "method", "scenario", "budget", "used", "robust ratio", "improvement"
    );
    for r in &report.rows {
        text.push_str(&format!(
            "{:<20} {:<14} {:<12} {:>8} {:>10.1} {:>8.4}±{:<5.4} {:>12}\n",
            r.run,
            r.method,
            r.scenario,
            r.budget,
            r.budget_used,
            r.robust_ratio,
            r.robust_ratio_std,
            fmt_imp(r.improvement)
        ));
    }
    for name in &report.incomplete {
        text.push_str(&format!("incomplete: {name}\n"));
    }
    std::fs::write(dir.join("report.txt"), text)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: Option<f64>,
}

/// Produces logits (trained or loaded) and writes them with the split and id map.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainSummary> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    let dir = config.out_dir();
    std::fs::create_dir_all(&dir)?;
    let header = config.header(config.train.seed);
    logits::save_logits(&dir.join("logits.csv"), &dataset.logits, Some(&header))?;
    dataset.split.write_csv(&dir.join("split.csv"))?;
    dataset.graph.write_id_map(&dir.join("id_map.csv"))?;
    let raw = ppr::predict(&dataset.logits);
    let acc = |s: Split| logits::accuracy(&raw, dataset.graph.labels(), &dataset.split.mask(s));
    let summary = TrainSummary {
        version: VERSION.into(),
        config_hash: config.hash(),
        seed: config.train.seed,
        train_accuracy: acc(Split::Train),
        val_accuracy: acc(Split::Val),
        test_accuracy: acc(Split::Test),
        final_loss: dataset.model.as_ref().and_then(|m| m.loss_trace.last().copied()),
    };
    write_json(&dir.join("train.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{Budget, BudgetSpec, DatasetConfig, PlantedPartition};

    fn toy_config(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(DatasetConfig::PlantedPartition(PlantedPartition {
            nodes: 40,
            classes: 2,
            p_in: 0.3,
            p_out: 0.05,
            feature_dim: 10,
            ..PlantedPartition::default()
        }));
        cfg.out = dir.to_path_buf();
        cfg.train.epochs = 50;
        cfg.seeds = vec![0, 1, 2];
        cfg
    }

    #[test]
    fn histogram_edges() {
        let h = histogram("all", &[0.0, 0.5, 1.0, 1.0], 0.0, 1.0, 2);
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), vec![1, 3]);
        let empty = histogram("immune", &[], 0.0, 1.0, 3);
        assert!(empty.iter().all(|b| b.count == 0 && b.fraction == 0.0));
    }

    #[test]
    fn improvement_examples() {
        assert_eq!(improvement(0.6, 0.5), Some(0.19999999999999996));
        assert_eq!(improvement(0.5, 0.0), None);
    }

    #[test]
    fn zero_budget_immunize_matches_certify() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_config(dir.path());
        cfg.immune_budget = BudgetSpec::One(Budget::Absolute(0));
        let cert = cmd_certify(&cfg).unwrap();
        let imm = cmd_immunize(&cfg).unwrap();
        assert_eq!(imm.robust_ratio, cert.robust_ratio);
        assert_eq!(imm.mean_worst_margin, cert.mean_worst_margin);
        assert_eq!(imm.budget_used, 0.0);
    }

    #[test]
    fn baseline_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_config(&dir.path().join("random"));
        cfg.immune_budget = BudgetSpec::Sweep(vec![Budget::Absolute(2), Budget::Absolute(4)]);
        cfg.method = RunMethod::Baseline(Method::Random);
        let m = cmd_baseline(&cfg).unwrap();
        assert_eq!(m.runs.len(), 2);
        assert_eq!(m.runs[1].per_seed.len(), 3);
        let masks = std::fs::read_to_string(dir.path().join("random/mask_random_C4.csv")).unwrap();
        assert!(masks.lines().nth(1).unwrap().starts_with("method,seed,round"));

        std::fs::create_dir_all(dir.path().join("broken")).unwrap();
        std::fs::write(dir.path().join("broken/config.json"), "{}").unwrap();
        let report = cmd_report(dir.path()).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.incomplete, vec!["broken".to_string()]);
        for r in &report.rows {
            let imp = r.improvement.unwrap();
            assert!(((r.robust_ratio - r.base_ratio) / r.base_ratio - imp).abs() < 1e-4);
        }
        assert!(dir.path().join("report.txt").is_file());
    }

    #[test]
    fn analyze_empty_mask() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_config(dir.path());
        let mask_path = dir.path().join("empty.csv");
        ImmuneMask::unconstrained(1)
            .write_csv(&mask_path, "empty", None)
            .unwrap();
        let a = cmd_analyze(&cfg, &mask_path).unwrap();
        assert_eq!(a.num_immune_pairs, 0);
        assert!(a.betweenness.iter().filter(|b| b.set == "immune").all(|b| b.count == 0));
        let all: usize = a.betweenness.iter().filter(|b| b.set == "all").map(|b| b.count).sum();
        assert_eq!(all, a.num_edges);
        assert_eq!(a.immune_same_label_fraction, None);
    }
}
