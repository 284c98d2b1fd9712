//! Graph ingestion, preprocessing and attack-surface construction.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Directed 0/1 adjacency stored as sorted neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    rows: Vec<Vec<usize>>,
}

impl Adjacency {
    /// Builds from arbitrary neighbor lists; rows are sorted and deduplicated.
    pub fn from_rows(mut rows: Vec<Vec<usize>>) -> Result<Self> {
        let n = rows.len();
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&j) = row.iter().find(|&&j| j >= n || j == i) {
                return Err(Error::InvalidEntry {
                    src: i,
                    dst: j,
                    value: 1,
                });
            }
        }
        Ok(Self { rows })
    }

    /// Symmetric adjacency from undirected pairs.
    pub fn from_undirected(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut rows = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidEntry {
                    src: a,
                    dst: b,
                    value: 1,
                });
            }
            rows[a].push(b);
            rows[b].push(a);
        }
        Self::from_rows(rows)
    }

    pub(crate) fn from_sorted_rows_unchecked(rows: Vec<Vec<usize>>) -> Self {
        debug_assert!(rows
            .iter()
            .enumerate()
            .all(|(i, r)| r.windows(2).all(|w| w[0] < w[1]) && !r.contains(&i)));
        Self { rows }
    }

    pub fn num_nodes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn degree(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.rows[i].binary_search(&j).is_ok()
    }

    /// Number of directed entries.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&j| (i, j)))
    }

    /// Unordered pairs `{i, j}` with at least one directed entry, as `(min, max)`.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> = self.entries().map(|(i, j)| (i.min(j), i.max(j))).collect();
        set.into_iter().collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.entries().all(|(i, j)| self.has_edge(j, i))
    }

    /// Column lists: `transpose().row(j)` holds every `i` with `i -> j`.
    pub fn transpose(&self) -> Adjacency {
        let mut cols = vec![Vec::new(); self.num_nodes()];
        for (i, j) in self.entries() {
            cols[j].push(i);
        }
        Adjacency { rows: cols }
    }
}

/// Dense row-major node attribute matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    num_nodes: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(num_nodes: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != num_nodes * dim {
            return Err(Error::Shape(format!(
                "feature buffer has {} values, expected {num_nodes}x{dim}",
                data.len()
            )));
        }
        Ok(Self { num_nodes, dim, data })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0 || x == 1.0)
    }

    fn select(&self, nodes: &[usize]) -> Features {
        let mut data = Vec::with_capacity(nodes.len() * self.dim);
        for &i in nodes {
            data.extend_from_slice(self.row(i));
        }
        Features {
            num_nodes: nodes.len(),
            dim: self.dim,
            data,
        }
    }
}

/// An attributed graph with directed adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Adjacency,
    features: Option<Features>,
    labels: Vec<Option<usize>>,
    original_ids: Vec<i64>,
}

impl Graph {
    /// A graph whose internal ids double as original ids.
    pub fn new(adjacency: Adjacency) -> Self {
        let n = adjacency.num_nodes();
        Self {
            adjacency,
            features: None,
            labels: vec![None; n],
            original_ids: (0..n as i64).collect(),
        }
    }

    pub fn from_undirected(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Ok(Self::new(Adjacency::from_undirected(n, edges)?))
    }

    pub fn with_features(mut self, features: Features) -> Result<Self> {
        if features.num_nodes() != self.num_nodes() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} nodes",
                features.num_nodes(),
                self.num_nodes()
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<Option<usize>>) -> Result<Self> {
        if labels.len() != self.num_nodes() {
            return Err(Error::Shape(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.num_nodes()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.num_nodes()
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.degrees()
    }

    pub fn features(&self) -> Option<&Features> {
        self.features.as_ref()
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn has_labels(&self) -> bool {
        self.labels.iter().any(Option::is_some)
    }

    /// Number of classes implied by the labels (max label + 1).
    pub fn num_classes(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |&m| m + 1)
    }

    pub fn original_ids(&self) -> &[i64] {
        &self.original_ids
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.adjacency.undirected_edges().len()
    }

    /// Induced subgraph on `nodes` (must be sorted ascending).
    pub fn induced(&self, nodes: &[usize]) -> Graph {
        let mut index = vec![usize::MAX; self.num_nodes()];
        for (new, &old) in nodes.iter().enumerate() {
            index[old] = new;
        }
        let rows = nodes
            .iter()
            .map(|&old| {
                self.adjacency
                    .row(old)
                    .iter()
                    .filter_map(|&j| (index[j] != usize::MAX).then_some(index[j]))
                    .collect()
            })
            .collect();
        Graph {
            adjacency: Adjacency::from_sorted_rows_unchecked(rows),
            features: self.features.as_ref().map(|f| f.select(nodes)),
            labels: nodes.iter().map(|&i| self.labels[i]).collect(),
            original_ids: nodes.iter().map(|&i| self.original_ids[i]).collect(),
        }
    }

    /// Writes the `original_id,internal_id` map.
    pub fn write_id_map(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["original_id", "internal_id"])?;
        for (internal, original) in self.original_ids.iter().enumerate() {
            w.write_record([original.to_string(), internal.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `node_id,label` rows keyed by original id.
    pub fn load_labels(self, path: &Path) -> Result<Graph> {
        let lookup = self.id_lookup();
        let mut labels = vec![None; self.num_nodes()];
        for (lineno, line) in read_lines(path)? {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 2 {
                return Err(parse_error(path, lineno, "expected node_id,label"));
            }
            let (Ok(id), Ok(label)) = (fields[0].parse::<i64>(), fields[1].parse::<usize>()) else {
                if lineno == 1 {
                    continue;
                }
                return Err(parse_error(path, lineno, "non-integer node id or label"));
            };
            if let Some(&internal) = lookup.get(&id) {
                labels[internal] = Some(label);
            }
        }
        self.with_labels(labels)
    }

    /// Reads one CSV row per node in ascending original-id order.
    pub fn load_features(self, path: &Path) -> Result<Graph> {
        let mut data = Vec::new();
        let mut dim = None;
        let mut rows = 0;
        for (lineno, line) in read_lines(path)? {
            let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let Ok(values) = parsed else {
                if lineno == 1 {
                    continue;
                }
                return Err(parse_error(path, lineno, "non-numeric feature value"));
            };
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(parse_error(
                        path,
                        lineno,
                        &format!("expected {d} columns, found {}", values.len()),
                    ))
                }
                _ => {}
            }
            data.extend(values);
            rows += 1;
        }
        let features = Features::new(rows, dim.unwrap_or(0), data)?;
        self.with_features(features)
    }

    fn id_lookup(&self) -> std::collections::HashMap<i64, usize> {
        self.original_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    }
}

/// Result of [`load_edge_list`].
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: Graph,
    pub duplicate_edges: usize,
    pub self_loops: usize,
}

fn parse_error(path: &Path, line: usize, message: &str) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((idx + 1, trimmed.to_string()));
    }
    Ok(out)
}

/// Loads a `src<TAB>dst` edge list as a symmetric graph.
///
/// Ids are compacted to `0..N` in ascending original-id order. Duplicate
/// edges (in either direction) and self-loops are dropped and counted.
pub fn load_edge_list(path: &Path) -> Result<LoadedGraph> {
    let mut pairs = Vec::new();
    let mut self_loops = 0;
    for (lineno, line) in read_lines(path)? {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_error(
                path,
                lineno,
                &format!("expected 2 fields, found {}", fields.len()),
            ));
        }
        let parse = |s: &str| {
            s.parse::<i64>()
                .map_err(|_| parse_error(path, lineno, &format!("invalid node id {s:?}")))
        };
        let (a, b) = (parse(fields[0])?, parse(fields[1])?);
        if a == b {
            self_loops += 1;
            continue;
        }
        pairs.push((a, b));
    }
    if pairs.is_empty() {
        return Err(Error::NoEdges);
    }
    let ids: BTreeSet<i64> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    let original_ids: Vec<i64> = ids.into_iter().collect();
    let index = |id: i64| original_ids.binary_search(&id).expect("id collected above");
    let mut unique = BTreeSet::new();
    let mut duplicate_edges = 0;
    for &(a, b) in &pairs {
        let (a, b) = (index(a), index(b));
        if !unique.insert((a.min(b), a.max(b))) {
            duplicate_edges += 1;
        }
    }
    if duplicate_edges > 0 {
        log::warn!("{}: dropped {duplicate_edges} duplicate edges", path.display());
    }
    if self_loops > 0 {
        log::warn!("{}: dropped {self_loops} self-loops", path.display());
    }
    let edges: Vec<(usize, usize)> = unique.into_iter().collect();
    let mut graph = Graph::from_undirected(original_ids.len(), &edges)?;
    graph.original_ids = original_ids;
    Ok(LoadedGraph {
        graph,
        duplicate_edges,
        self_loops,
    })
}

/// Weakly connected components, each sorted, ordered by smallest member.
pub fn connected_components(adjacency: &Adjacency) -> Vec<Vec<usize>> {
    let n = adjacency.num_nodes();
    let mut uf = UnionFind::<usize>::new(n);
    for (i, j) in adjacency.entries() {
        uf.union(i, j);
    }
    let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    let mut order = Vec::new();
    for i in 0..n {
        let root = uf.find(i);
        let members = by_root.entry(root).or_default();
        if members.is_empty() {
            order.push(root);
        }
        members.push(i);
    }
    order
        .into_iter()
        .map(|r| by_root.remove(&r).expect("root recorded"))
        .collect()
}

/// Induced subgraph on the largest weakly connected component.
///
/// Ties go to the component containing the lowest node id.
pub fn largest_connected_component(graph: &Graph) -> Graph {
    let components = connected_components(graph.adjacency());
    let mut best: Option<&Vec<usize>> = None;
    for c in &components {
        if best.is_none_or(|b| c.len() > b.len()) {
            best = Some(c);
        }
    }
    match best {
        Some(c) if c.len() < graph.num_nodes() => graph.induced(c),
        _ => graph.clone(),
    }
}

/// Spanning tree edges as undirected `(min, max)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanningTree {
    pub edges: Vec<(usize, usize)>,
}

impl SpanningTree {
    /// Both directions of every tree edge.
    pub fn directed(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = self.edges.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        out.sort_unstable();
        out
    }
}

/// Kruskal with unit weights, scanning undirected edges in lexicographic order.
pub fn minimum_spanning_tree(graph: &Graph) -> Result<SpanningTree> {
    let n = graph.num_nodes();
    let mut uf = UnionFind::<usize>::new(n);
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    for (a, b) in graph.adjacency().undirected_edges() {
        if uf.union(a, b) {
            edges.push((a, b));
        }
    }
    if edges.len() + 1 != n {
        let components = connected_components(graph.adjacency()).len();
        return Err(Error::Disconnected { components });
    }
    Ok(SpanningTree { edges })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    RemoveOnly,
    RemoveAdd,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::RemoveOnly => "remove-only",
            Scenario::RemoveAdd => "remove-add",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remove-only" => Ok(Scenario::RemoveOnly),
            "remove-add" => Ok(Scenario::RemoveAdd),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Per-node budget rule, used for both attack and immunization budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalBudgetRule {
    /// `D_t`
    Degree,
    /// `max(D_t - 6, 0)`
    MaxDegMinus6,
    /// Unlimited.
    None,
}

impl LocalBudgetRule {
    pub fn attack_default(scenario: Scenario) -> Self {
        match scenario {
            Scenario::RemoveOnly => LocalBudgetRule::Degree,
            Scenario::RemoveAdd => LocalBudgetRule::MaxDegMinus6,
        }
    }

    pub fn immune_default(scenario: Scenario) -> Self {
        match scenario {
            Scenario::RemoveOnly => LocalBudgetRule::Degree,
            Scenario::RemoveAdd => LocalBudgetRule::None,
        }
    }

    /// `None` entries mean unlimited.
    pub fn apply(self, degrees: &[usize]) -> Vec<Option<usize>> {
        degrees
            .iter()
            .map(|&d| match self {
                LocalBudgetRule::Degree => Some(d),
                LocalBudgetRule::MaxDegMinus6 => Some(d.saturating_sub(6)),
                LocalBudgetRule::None => None,
            })
            .collect()
    }
}

impl std::str::FromStr for LocalBudgetRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "degree" => Ok(LocalBudgetRule::Degree),
            "max-deg-minus-6" => Ok(LocalBudgetRule::MaxDegMinus6),
            "none" => Ok(LocalBudgetRule::None),
            other => Err(Error::Config(format!("unknown local budget rule {other:?}"))),
        }
    }
}

/// Directed entries the attacker may toggle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FragileSet {
    /// Explicit per-row sorted lists.
    Listed(Vec<Vec<usize>>),
    /// Every off-diagonal pair outside the fixed set.
    AllNonFixed,
}

/// Admissible perturbations: fixed entries, fragile entries and budgets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackSpec {
    fixed: Vec<Vec<usize>>,
    fragile: FragileSet,
    local_budget: Vec<usize>,
    global_budget: u64,
    scenario: Option<Scenario>,
}

impl AttackSpec {
    /// Arbitrary attack surface; `fixed` and `fragile` are directed entries.
    pub fn custom(
        num_nodes: usize,
        fixed: &[(usize, usize)],
        fragile: &[(usize, usize)],
        local_budget: Vec<usize>,
    ) -> Result<Self> {
        if local_budget.len() != num_nodes {
            return Err(Error::Shape(format!(
                "{} local budgets for {num_nodes} nodes",
                local_budget.len()
            )));
        }
        let to_rows = |entries: &[(usize, usize)]| -> Result<Vec<Vec<usize>>> {
            let mut rows = vec![Vec::new(); num_nodes];
            for &(i, j) in entries {
                rows.get_mut(i)
                    .filter(|_| j < num_nodes && i != j)
                    .ok_or(Error::InvalidEntry {
                        src: i,
                        dst: j,
                        value: 1,
                    })?
                    .push(j);
            }
            for r in &mut rows {
                r.sort_unstable();
                r.dedup();
            }
            Ok(rows)
        };
        let fixed = to_rows(fixed)?;
        let fragile = to_rows(fragile)?;
        for (i, row) in fragile.iter().enumerate() {
            if let Some(&j) = row.iter().find(|j| fixed[i].binary_search(j).is_ok()) {
                return Err(Error::Config(format!("entry ({i}, {j}) is both fixed and fragile")));
            }
        }
        let n2 = (num_nodes as u64).pow(2);
        Ok(Self {
            fixed,
            fragile: FragileSet::Listed(fragile),
            local_budget,
            global_budget: n2,
            scenario: None,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.fixed.len()
    }

    pub fn scenario(&self) -> Option<Scenario> {
        self.scenario
    }

    pub fn fragile(&self) -> &FragileSet {
        &self.fragile
    }

    pub fn fixed_row(&self, i: usize) -> &[usize] {
        &self.fixed[i]
    }

    pub fn is_fixed(&self, i: usize, j: usize) -> bool {
        self.fixed[i].binary_search(&j).is_ok()
    }

    pub fn is_fragile(&self, i: usize, j: usize) -> bool {
        match &self.fragile {
            FragileSet::Listed(rows) => rows[i].binary_search(&j).is_ok(),
            FragileSet::AllNonFixed => i != j && !self.is_fixed(i, j),
        }
    }

    pub fn local_budget(&self) -> &[usize] {
        &self.local_budget
    }

    pub fn global_budget(&self) -> u64 {
        self.global_budget
    }

    pub fn set_global_budget(&mut self, budget: u64) {
        self.global_budget = budget;
    }

    /// Number of directed fixed entries.
    pub fn num_fixed(&self) -> usize {
        self.fixed.iter().map(Vec::len).sum()
    }

    /// Number of directed fragile entries.
    pub fn num_fragile(&self) -> usize {
        match &self.fragile {
            FragileSet::Listed(rows) => rows.iter().map(Vec::len).sum(),
            FragileSet::AllNonFixed => {
                let n = self.num_nodes();
                n * n.saturating_sub(1) - self.num_fixed()
            }
        }
    }

    /// Listed fragile entries of row `i`, or `None` for the implicit complement.
    pub fn fragile_row(&self, i: usize) -> Option<&[usize]> {
        match &self.fragile {
            FragileSet::Listed(rows) => Some(&rows[i]),
            FragileSet::AllNonFixed => None,
        }
    }
}

/// Attack surface for one of the two experimental scenarios with default budgets.
pub fn build_attack_spec(graph: &Graph, tree: &SpanningTree, scenario: Scenario) -> AttackSpec {
    build_attack_spec_with(graph, tree, scenario, LocalBudgetRule::attack_default(scenario))
}

/// Like [`build_attack_spec`] with an explicit local budget rule.
pub fn build_attack_spec_with(
    graph: &Graph,
    tree: &SpanningTree,
    scenario: Scenario,
    rule: LocalBudgetRule,
) -> AttackSpec {
    let n = graph.num_nodes();
    let mut fixed = vec![Vec::new(); n];
    for (i, j) in tree.directed() {
        fixed[i].push(j);
    }
    let fragile = match scenario {
        Scenario::RemoveOnly => FragileSet::Listed(
            (0..n)
                .map(|i| {
                    graph
                        .adjacency()
                        .row(i)
                        .iter()
                        .copied()
                        .filter(|j| fixed[i].binary_search(j).is_err())
                        .collect()
                })
                .collect(),
        ),
        Scenario::RemoveAdd => FragileSet::AllNonFixed,
    };
    let local_budget = rule
        .apply(&graph.degrees())
        .into_iter()
        .map(|b| b.unwrap_or(n))
        .collect();
    AttackSpec {
        fixed,
        fragile,
        local_budget,
        global_budget: (n as u64).pow(2),
        scenario: Some(scenario),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn triangle() -> Graph {
        Graph::from_undirected(3, &[(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn loads_triangle() {
        let f = write_tmp("0\t1\n1\t2\n0\t2\n");
        let loaded = load_edge_list(f.path()).unwrap();
        let g = loaded.graph;
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.adjacency().nnz(), 6);
        assert_eq!(g.degrees(), vec![2, 2, 2]);
        assert!(g.adjacency().is_symmetric());
    }

    #[test]
    fn empty_file_has_no_edges() {
        let f = write_tmp("");
        assert!(matches!(load_edge_list(f.path()), Err(Error::NoEdges)));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_tmp("0\t1\n1\tx\n");
        match load_edge_list(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("0\t1\t2\n");
        assert!(matches!(load_edge_list(f.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicates_are_counted_and_ids_compacted() {
        let f = write_tmp("10\t20\n20\t10\n10\t20\n20\t35\n7\t7\n");
        let loaded = load_edge_list(f.path()).unwrap();
        assert_eq!(loaded.duplicate_edges, 2);
        assert_eq!(loaded.self_loops, 1);
        assert_eq!(loaded.graph.original_ids(), &[10, 20, 35]);
        assert_eq!(loaded.graph.num_edges(), 2);
    }

    #[test]
    fn labels_and_features_follow_original_ids() {
        let f = write_tmp("5\t3\n3\t9\n");
        let labels = write_tmp("node_id,label\n9,2\n3,0\n");
        let feats = write_tmp("a,b\n1,0\n0,1\n0.5,0.5\n");
        let g = load_edge_list(f.path())
            .unwrap()
            .graph
            .load_labels(labels.path())
            .unwrap()
            .load_features(feats.path())
            .unwrap();
        assert_eq!(g.labels(), &[Some(0), None, Some(2)]);
        let x = g.features().unwrap();
        assert_eq!(x.dim(), 2);
        assert_eq!(x.row(2), &[0.5, 0.5]);
    }

    #[test]
    fn id_map_round_trip() {
        let f = write_tmp("4\t8\n8\t15\n");
        let g = load_edge_list(f.path()).unwrap().graph;
        let out = tempfile::NamedTempFile::new().unwrap();
        g.write_id_map(out.path()).unwrap();
        let text = std::fs::read_to_string(out.path()).unwrap();
        assert_eq!(text, "original_id,internal_id\n4,0\n8,1\n15,2\n");
    }

    #[test]
    fn lcc_tie_prefers_lowest_id() {
        // two triangles 0-1-2 and 3-4-5 plus isolated node 6
        let g = Graph::from_undirected(7, &[(3, 4), (4, 5), (3, 5), (0, 1), (1, 2), (0, 2)]).unwrap();
        let lcc = largest_connected_component(&g);
        assert_eq!(lcc.original_ids(), &[0, 1, 2]);
        assert_eq!(lcc.num_edges(), 3);
    }

    #[test]
    fn lcc_of_connected_graph_is_identity() {
        let g = triangle();
        assert_eq!(largest_connected_component(&g), g);
    }

    #[test]
    fn lcc_picks_larger_component() {
        let g = Graph::from_undirected(6, &[(0, 1), (2, 3), (3, 4), (4, 5)]).unwrap();
        let lcc = largest_connected_component(&g);
        assert_eq!(lcc.original_ids(), &[2, 3, 4, 5]);
        assert!(lcc.degrees().iter().all(|&d| d >= 1));
    }

    #[test]
    fn mst_of_triangle_is_lexicographic() {
        let tree = minimum_spanning_tree(&triangle()).unwrap();
        assert_eq!(tree.edges, vec![(0, 1), (0, 2)]);
        assert_eq!(tree.directed().len(), 4);
    }

    #[test]
    fn mst_of_tree_is_itself() {
        let path = Graph::from_undirected(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        assert_eq!(
            minimum_spanning_tree(&path).unwrap().edges,
            vec![(0, 1), (1, 2), (2, 3), (3, 4)]
        );
        let star = Graph::from_undirected(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        assert_eq!(minimum_spanning_tree(&star).unwrap().edges.len(), 4);
    }

    #[test]
    fn mst_rejects_disconnected() {
        let g = Graph::from_undirected(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(matches!(
            minimum_spanning_tree(&g),
            Err(Error::Disconnected { components: 2 })
        ));
    }

    #[test]
    fn triangle_remove_only_spec() {
        let g = triangle();
        let tree = minimum_spanning_tree(&g).unwrap();
        let spec = build_attack_spec(&g, &tree, Scenario::RemoveOnly);
        assert_eq!(spec.num_fragile(), 2);
        assert!(spec.is_fragile(1, 2) && spec.is_fragile(2, 1));
        assert!(!spec.is_fragile(0, 1));
        assert_eq!(spec.local_budget(), &[2, 2, 2]);
        assert_eq!(spec.global_budget(), 9);
    }

    #[test]
    fn remove_add_budgets() {
        let rule = LocalBudgetRule::MaxDegMinus6;
        assert_eq!(rule.apply(&[4, 9, 6]), vec![Some(0), Some(3), Some(0)]);
        let g = triangle();
        let tree = minimum_spanning_tree(&g).unwrap();
        let spec = build_attack_spec(&g, &tree, Scenario::RemoveAdd);
        assert_eq!(spec.num_fragile(), 3 * 2 - 4);
        assert!(!spec.is_fragile(0, 0));
    }

    #[test]
    fn custom_spec_rejects_overlap() {
        assert!(AttackSpec::custom(3, &[(0, 1)], &[(0, 1)], vec![1; 3]).is_err());
        assert!(AttackSpec::custom(3, &[(0, 1)], &[(1, 1)], vec![1; 3]).is_err());
    }
}
