//! Graph and dataset model, bundle ingestion, labeled-node sampling and
//! construction of the balanced attack pair set.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::GraphError;
use crate::numerics::Matrix;
use crate::rng::seeded;

pub type NodeId = usize;

/// Undirected simple graph. Edges are stored once as `(u, v)` with `u < v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(NodeId, NodeId)>,
    adjacency: Vec<Vec<NodeId>>,
}

impl Graph {
    /// Builds a graph, canonicalising and deduplicating edges.
    ///
    /// Self loops and out-of-range ids are integrity errors here; the file
    /// loader drops self loops before calling this.
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self, GraphError> {
        let mut canon = Vec::new();
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(GraphError::Integrity(format!(
                    "edge ({u}, {v}) references a node outside [0, {node_count})"
                )));
            }
            if u == v {
                return Err(GraphError::Integrity(format!("self loop on node {u}")));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        canon.dedup();
        let mut adjacency = vec![Vec::new(); node_count];
        for &(u, v) in &canon {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        Ok(Self {
            node_count,
            edges: canon,
            adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn neighbors(&self, u: NodeId) -> &[NodeId] {
        &self.adjacency[u]
    }

    pub fn degree(&self, u: NodeId) -> usize {
        self.adjacency[u].len()
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        u < self.node_count && self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Number of unordered node pairs that are not edges.
    pub fn non_edge_count(&self) -> usize {
        let n = self.node_count;
        n * n.saturating_sub(1) / 2 - self.edges.len()
    }
}

/// Node-classification dataset: graph, attribute matrix, partial labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub attributes: Matrix,
    pub labels: Vec<Option<usize>>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        graph: Graph,
        attributes: Matrix,
        labels: Vec<Option<usize>>,
        num_classes: usize,
    ) -> Result<Self, GraphError> {
        let n = graph.node_count();
        if attributes.rows() != n {
            return Err(GraphError::Integrity(format!(
                "{} attribute rows for {n} nodes",
                attributes.rows()
            )));
        }
        if labels.len() != n {
            return Err(GraphError::Integrity(format!(
                "{} label slots for {n} nodes",
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(GraphError::Integrity(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        if let Some((node, class)) = labels
            .iter()
            .enumerate()
            .find_map(|(i, l)| l.filter(|&c| c >= num_classes).map(|c| (i, c)))
        {
            return Err(GraphError::Integrity(format!(
                "node {node} has class {class}, outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            name: name.into(),
            graph,
            attributes,
            labels,
            num_classes,
        })
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.cols()
    }

    pub fn labeled_nodes(&self) -> Vec<NodeId> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|_| i))
            .collect()
    }

    /// Labels for `ids`; every id must be labeled.
    pub fn labels_of(&self, ids: &[NodeId]) -> Result<Vec<usize>, GraphError> {
        ids.iter()
            .map(|&i| {
                self.labels
                    .get(i)
                    .copied()
                    .flatten()
                    .ok_or_else(|| GraphError::Config(format!("node {i} has no label")))
            })
            .collect()
    }

    /// Writes the bundle layout: `edges.txt`, `attrs.csv`, `labels.csv`, `meta.json`.
    pub fn save_bundle(&self, dir: &Path) -> Result<(), GraphError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut edges = String::new();
        for &(u, v) in self.graph.edges() {
            writeln!(edges, "{u} {v}").unwrap();
        }
        let mut attrs = String::new();
        for r in 0..self.attributes.rows() {
            let row: Vec<String> = self
                .attributes
                .row(r)
                .iter()
                .map(|v| v.to_string())
                .collect();
            writeln!(attrs, "{}", row.join(",")).unwrap();
        }
        let mut labels = String::from("node_id,class_id\n");
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                writeln!(labels, "{i},{c}").unwrap();
            }
        }
        let meta = BundleMeta {
            name: self.name.clone(),
            num_classes: self.num_classes,
            attr_dim: self.attr_dim(),
        };
        let write = |name: &str, body: &str| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| io_err(&p, e))
        };
        write("edges.txt", &edges)?;
        write("attrs.csv", &attrs)?;
        write("labels.csv", &labels)?;
        write(
            "meta.json",
            &(serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n"),
        )
    }
}

/// `meta.json` of a dataset bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub name: String,
    pub num_classes: usize,
    pub attr_dim: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> GraphError {
    GraphError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_attributes(path: &Path) -> Result<Matrix, GraphError> {
    let text = read(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, i + 1, format!("bad attribute value: {e}")))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("{} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, i + 1, "non-finite attribute value"));
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows).map_err(|e| GraphError::Integrity(e.to_string()))
}

fn parse_edges(path: &Path, node_count: usize) -> Result<Vec<(NodeId, NodeId)>, GraphError> {
    let text = read(path)?;
    let mut edges = Vec::new();
    let mut self_loops = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ids: Vec<&str> = line.split_whitespace().collect();
        if ids.len() != 2 {
            return Err(parse_err(path, i + 1, "expected two node ids"));
        }
        let mut pair = [0usize; 2];
        for (slot, tok) in pair.iter_mut().zip(&ids) {
            *slot = tok
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("bad node id {tok:?}")))?;
        }
        let [u, v] = pair;
        if u >= node_count || v >= node_count {
            return Err(GraphError::Integrity(format!(
                "{}:{}: edge ({u}, {v}) but only {node_count} attribute rows",
                path.display(),
                i + 1
            )));
        }
        if u == v {
            self_loops += 1;
            continue;
        }
        edges.push((u, v));
    }
    if self_loops > 0 {
        warn!("{}: dropped {self_loops} self loop(s)", path.display());
    }
    Ok(edges)
}

fn parse_labels(path: &Path, node_count: usize) -> Result<Vec<Option<usize>>, GraphError> {
    let text = read(path)?;
    let mut labels = vec![None; node_count];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("node_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(parse_err(path, i + 1, "expected node_id,class_id"));
        }
        let node: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad node id {:?}", fields[0])))?;
        let class: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad class id {:?}", fields[1])))?;
        if node >= node_count {
            return Err(GraphError::Integrity(format!(
                "{}:{}: label for node {node} but only {node_count} attribute rows",
                path.display(),
                i + 1
            )));
        }
        match labels[node] {
            Some(c) if c != class => {
                return Err(GraphError::Integrity(format!(
                    "node {node} labeled both {c} and {class}"
                )))
            }
            _ => labels[node] = Some(class),
        }
    }
    Ok(labels)
}

/// Loads a dataset from its three files. The node count is the number of
/// attribute rows; `num_classes` is inferred as `max(label) + 1` (at least 2).
pub fn load_dataset(
    graph_path: &Path,
    attr_path: &Path,
    label_path: &Path,
) -> Result<Dataset, GraphError> {
    let attributes = parse_attributes(attr_path)?;
    let n = attributes.rows();
    let edges = parse_edges(graph_path, n)?;
    let labels = parse_labels(label_path, n)?;
    let num_classes = labels.iter().flatten().max().map_or(2, |&m| (m + 1).max(2));
    let graph = Graph::new(n, edges)?;
    let name = graph_path.parent().and_then(|p| p.file_name()).map_or_else(
        || "dataset".to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    Dataset::new(name, graph, attributes, labels, num_classes)
}

/// Paths of the four bundle files inside `dir`.
pub fn bundle_paths(dir: &Path) -> [PathBuf; 4] {
    ["edges.txt", "attrs.csv", "labels.csv", "meta.json"].map(|f| dir.join(f))
}

/// Loads a bundle directory, validating it against `meta.json`.
pub fn load_bundle(dir: &Path) -> Result<Dataset, GraphError> {
    let [edges, attrs, labels, meta_path] = bundle_paths(dir);
    for p in [&edges, &attrs, &labels, &meta_path] {
        if !p.is_file() {
            return Err(GraphError::Config(format!(
                "missing bundle file {}",
                p.display()
            )));
        }
    }
    let meta: BundleMeta = serde_json::from_str(&read(&meta_path)?)
        .map_err(|e| parse_err(&meta_path, e.line(), e.to_string()))?;
    let mut ds = load_dataset(&edges, &attrs, &labels)?;
    if ds.attr_dim() != meta.attr_dim && ds.node_count() > 0 {
        return Err(GraphError::Integrity(format!(
            "meta.json declares attr_dim {} but attrs.csv has {} columns",
            meta.attr_dim,
            ds.attr_dim()
        )));
    }
    if ds.num_classes > meta.num_classes {
        return Err(GraphError::Integrity(format!(
            "labels use {} classes but meta.json declares {}",
            ds.num_classes, meta.num_classes
        )));
    }
    ds.num_classes = meta.num_classes;
    ds.name = meta.name;
    Ok(ds)
}

/// Samples `floor(fraction * node_count)` distinct labeled nodes uniformly
/// without replacement. The result is sorted.
pub fn sample_labeled_nodes(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<Vec<NodeId>, GraphError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(GraphError::Config(format!(
            "labeled fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let count = (fraction * dataset.node_count() as f64).floor() as usize;
    if count == 0 {
        return Err(GraphError::Config(format!(
            "fraction {fraction} of {} nodes selects no node",
            dataset.node_count()
        )));
    }
    let pool = dataset.labeled_nodes();
    if pool.len() < count {
        return Err(GraphError::Config(format!(
            "need {count} labeled nodes, dataset has {}",
            pool.len()
        )));
    }
    let mut rng = seeded(seed);
    let mut chosen: Vec<NodeId> = pool.choose_multiple(&mut rng, count).copied().collect();
    chosen.sort_unstable();
    Ok(chosen)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A candidate link, stored with `u < v`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttackPair {
    pub u: NodeId,
    pub v: NodeId,
    pub linked: bool,
    pub split: Split,
}

impl AttackPair {
    pub fn new(a: NodeId, b: NodeId, linked: bool) -> Self {
        Self {
            u: a.min(b),
            v: a.max(b),
            linked,
            split: Split::Test,
        }
    }

    /// The same pair with endpoints presented in the opposite order.
    pub fn swapped(self) -> Self {
        Self {
            u: self.v,
            v: self.u,
            ..self
        }
    }
}

/// Labeled node pairs, balanced between linked and unlinked.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackPairSet {
    pairs: Vec<AttackPair>,
}

impl AttackPairSet {
    pub fn from_pairs(pairs: Vec<AttackPair>) -> Self {
        Self { pairs }
    }

    pub fn pairs(&self) -> &[AttackPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.linked).count()
    }

    pub fn negatives(&self) -> usize {
        self.pairs.len() - self.positives()
    }

    pub fn with_split(&self, split: Split) -> Vec<AttackPair> {
        self.pairs
            .iter()
            .filter(|p| p.split == split)
            .copied()
            .collect()
    }

    pub fn train(&self) -> Vec<AttackPair> {
        self.with_split(Split::Train)
    }

    pub fn test(&self) -> Vec<AttackPair> {
        self.with_split(Split::Test)
    }

    /// Linked pairs of the train split, as the adversary's known subgraph.
    pub fn partial_graph(&self, parent: &Graph) -> Result<PartialGraph, GraphError> {
        let edges: Vec<_> = self
            .pairs
            .iter()
            .filter(|p| p.linked && p.split == Split::Train)
            .map(|p| (p.u, p.v))
            .collect();
        PartialGraph::new(parent, edges)
    }
}

/// Known subset of the target graph's edges.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialGraph {
    graph: Graph,
}

impl PartialGraph {
    pub fn new(
        parent: &Graph,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self, GraphError> {
        let edges: Vec<_> = edges.into_iter().collect();
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| !parent.has_edge(u, v)) {
            return Err(GraphError::Integrity(format!(
                "partial graph edge ({u}, {v}) is not in the parent graph"
            )));
        }
        Ok(Self {
            graph: Graph::new(parent.node_count(), edges)?,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }
}

const REJECTION_WINDOW: usize = 1000;

/// All edges as positives plus an equal number of distinct non-adjacent
/// pairs, sampled uniformly without replacement.
///
/// Rejection sampling is used while it is efficient; once more than half of
/// a 1000-draw window is rejected, the remaining negatives are drawn from an
/// explicit enumeration of the unused non-edges.
pub fn build_attack_pairs(graph: &Graph, seed: u64) -> Result<AttackPairSet, GraphError> {
    let needed = graph.edge_count();
    let available = graph.non_edge_count();
    if available < needed {
        return Err(GraphError::SamplingInfeasible { needed, available });
    }
    let n = graph.node_count();
    let mut rng = seeded(seed);
    let mut chosen: Vec<(NodeId, NodeId)> = Vec::with_capacity(needed);
    let mut seen: HashSet<(NodeId, NodeId)> = HashSet::with_capacity(needed);

    let (mut draws, mut rejects) = (0usize, 0usize);
    while chosen.len() < needed {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        draws += 1;
        let pair = (a.min(b), a.max(b));
        if a == b || graph.has_edge(a, b) || seen.contains(&pair) {
            rejects += 1;
        } else {
            seen.insert(pair);
            chosen.push(pair);
        }
        if draws == REJECTION_WINDOW {
            if rejects * 2 > REJECTION_WINDOW {
                break;
            }
            draws = 0;
            rejects = 0;
        }
    }
    if chosen.len() < needed {
        let mut rest: Vec<(NodeId, NodeId)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|&(u, v)| !graph.has_edge(u, v) && !seen.contains(&(u, v)))
            .collect();
        let missing = needed - chosen.len();
        let (picked, _) = rest.partial_shuffle(&mut rng, missing);
        chosen.extend_from_slice(picked);
    }
    chosen.sort_unstable();

    let pairs = graph
        .edges()
        .iter()
        .map(|&(u, v)| AttackPair::new(u, v, true))
        .chain(
            chosen
                .into_iter()
                .map(|(u, v)| AttackPair::new(u, v, false)),
        )
        .collect();
    Ok(AttackPairSet { pairs })
}

/// Randomly tags `round(len * train_fraction)` pairs as train, the rest test.
pub fn split_pairs(
    pairs: &AttackPairSet,
    train_fraction: f64,
    seed: u64,
) -> Result<AttackPairSet, GraphError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(GraphError::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = pairs.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let mut out = pairs.pairs.clone();
    for (rank, &i) in order.iter().enumerate() {
        out[i].split = if rank < n_train {
            Split::Train
        } else {
            Split::Test
        };
    }
    Ok(AttackPairSet { pairs: out })
}

/// Label histogram, handy for sanity output.
pub fn class_counts(dataset: &Dataset) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for c in dataset.labels.iter().flatten() {
        *m.entry(*c).or_insert(0) += 1;
    }
    m
}
