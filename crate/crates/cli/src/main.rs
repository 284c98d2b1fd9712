use std::path::PathBuf;
use std::process::ExitCode;

use advimmune::graph::{LocalBudgetRule, Scenario};
use advimmune::harness::{self, Budget, BudgetSpec, DatasetConfig, ExperimentConfig, PlantedPartition, RunMethod};
use advimmune::Error;
use clap::{Args, Parser, Subcommand};

const BUDGET_HELP: &str = "Immune budget C: a count of directed entries or a percentage such as 5%. \
Percentages are taken of the undirected clean edges (remove-only) or of the N(N-1)/2 node pairs \
(remove-add) and rounded down. Comma-separated values run a sweep.";

#[derive(Parser)]
#[command(
    name = "advimmune",
    version,
    about = "Certify and immunize PageRank-diffusion node classifiers against structure attacks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Worst-case margins of every node on the clean graph.
    Certify(Common),
    /// Greedy meta-gradient immunization over the budget sweep.
    Immunize(Common),
    /// A heuristic baseline over the budget sweep and seeds.
    Baseline(Common),
    /// Betweenness, similarity and label histograms of immune pairs.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Mask CSV written by immunize.
        #[arg(long)]
        mask: PathBuf,
    },
    /// Consolidated table of every run under a directory.
    Report {
        /// Directory whose subdirectories hold runs.
        dir: PathBuf,
    },
    /// Train the linear logits model and write logits, split and id map.
    Train(Common),
    /// Write a planted-partition dataset as edges.tsv, labels.csv and features.csv.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        nodes: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0.012)]
        p_in: f64,
        #[arg(long, default_value_t = 0.003)]
        p_out: f64,
        #[arg(long, default_value_t = 60)]
        feature_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Edge list, used instead of the config's dataset.
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long, requires = "edges")]
    labels: Option<PathBuf>,
    #[arg(long, requires = "edges")]
    features: Option<PathBuf>,
    /// N x K logits CSV in internal id order; trained when absent.
    #[arg(long, requires = "edges")]
    logits: Option<PathBuf>,
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<Scenario>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, help = BUDGET_HELP, value_delimiter = ',', value_parser = parse_budget)]
    budget: Vec<Budget>,
    /// Immune local budget c_t.
    #[arg(long, value_parser = parse_rule)]
    local_budget: Option<LocalBudgetRule>,
    /// Attacker local budget b_t.
    #[arg(long, value_parser = parse_rule)]
    attack_local_budget: Option<LocalBudgetRule>,
    /// none, advimmune, random, attack-random, jaccard, cosine, betweenness or bridgeness.
    #[arg(long, value_parser = parse_method)]
    method: Option<RunMethod>,
    /// A seed count (10 means 0..10) or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_budget(s: &str) -> Result<Budget, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_rule(s: &str) -> Result<LocalBudgetRule, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> Result<RunMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Error> {
    let bad = || Error::Config(format!("--seeds {s:?} is neither a count nor a list"));
    if s.contains(',') {
        return s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect();
    }
    let count: u64 = s.trim().parse().map_err(|_| bad())?;
    Ok((0..count).collect())
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match (&self.config, &self.edges) {
            (Some(path), None) => ExperimentConfig::load(path)?,
            (Some(path), Some(_)) => {
                let mut cfg = ExperimentConfig::load(path)?;
                cfg.dataset = self.files_dataset();
                cfg.base_dir = PathBuf::new();
                cfg
            }
            (None, Some(_)) => ExperimentConfig::new(self.files_dataset()),
            (None, None) => return Err(Error::Config("either --config or --edges is required".into())),
        };
        if let Some(s) = self.scenario {
            cfg.scenario = s;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        match self.budget.as_slice() {
            [] => {}
            [b] => cfg.immune_budget = BudgetSpec::One(*b),
            many => cfg.immune_budget = BudgetSpec::Sweep(many.to_vec()),
        }
        if let Some(r) = self.local_budget {
            cfg.immune_local_budget = Some(r);
        }
        if let Some(r) = self.attack_local_budget {
            cfg.attack_local_budget = Some(r);
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        if let Some(out) = &self.out {
            // command-line paths are relative to the working directory
            cfg.out = std::env::current_dir()?.join(out);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn files_dataset(&self) -> DatasetConfig {
        let cwd = std::env::current_dir().unwrap_or_default();
        let abs = |p: &PathBuf| cwd.join(p);
        DatasetConfig::Files {
            edges: abs(self.edges.as_ref().expect("edges given")),
            labels: self.labels.as_ref().map(abs),
            features: self.features.as_ref().map(abs),
            logits: self.logits.as_ref().map(abs),
            split: None,
        }
    }
}

fn print<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Certify(c) => print(&harness::cmd_certify(&c.config()?)?),
        Command::Immunize(c) => {
            let cfg = c.config()?;
            match cfg.method {
                RunMethod::AdvImmune => print(&harness::cmd_immunize(&cfg)?),
                RunMethod::NoDefense => print(&harness::cmd_certify(&cfg)?),
                RunMethod::Baseline(_) => print(&harness::cmd_baseline(&cfg)?),
            }
        }
        Command::Baseline(c) => print(&harness::cmd_baseline(&c.config()?)?),
        Command::Analyze { common, mask } => {
            let a = harness::cmd_analyze(&common.config()?, &mask)?;
            println!(
                "{} immune pairs ({} on edges); same-label fraction: immune {}, all {:.4}",
                a.num_immune_pairs,
                a.num_immune_edges,
                a.immune_same_label_fraction
                    .map_or_else(|| "n/a".into(), |f| format!("{f:.4}")),
                a.all_same_label_fraction
            );
            Ok(())
        }
        Command::Report { dir } => {
            harness::cmd_report(&dir)?;
            print!("{}", std::fs::read_to_string(dir.join("report.txt"))?);
            Ok(())
        }
        Command::Train(c) => print(&harness::cmd_train(&c.config()?)?),
        Command::Generate {
            out,
            nodes,
            classes,
            p_in,
            p_out,
            feature_dim,
            seed,
        } => {
            let p = PlantedPartition {
                nodes,
                classes,
                p_in,
                p_out,
                feature_dim,
                seed,
                ..PlantedPartition::default()
            };
            ExperimentConfig::new(DatasetConfig::PlantedPartition(p)).validate()?;
            let g = harness::planted_partition(&p)?;
            harness::write_dataset(&g, &out)?;
            println!(
                "wrote {} nodes, {} edges to {}",
                g.num_nodes(),
                g.num_edges(),
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
