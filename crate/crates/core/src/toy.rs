//! Small synthetic datasets for tests, demos and smoke runs.

use rand::Rng;

use crate::graph::{Dataset, Graph};
use crate::numerics::Matrix;
use crate::rng::seeded;

fn one_hot(n: usize, dim: usize, hot: impl Fn(usize) -> usize) -> Matrix {
    let mut m = Matrix::zeros(n, dim);
    for i in 0..n {
        m.set(i, hot(i), 1.0);
    }
    m
}

/// Two disjoint 4-cliques (nodes 0-3 and 4-7). Attributes one-hot encode
/// the clique, which is also the label.
pub fn two_cliques() -> Dataset {
    let clique =
        |base: usize| (0..4).flat_map(move |a| (a + 1..4).map(move |b| (base + a, base + b)));
    let graph = Graph::new(8, clique(0).chain(clique(4))).expect("valid cliques");
    let labels = (0..8).map(|i| Some(i / 4)).collect();
    Dataset::new("two-cliques", graph, one_hot(8, 2, |i| i / 4), labels, 2).expect("valid dataset")
}

/// Path `0 - 1 - ... - (n-1)` with one-hot identity attributes. The first
/// half is class 0, the rest class 1.
pub fn path(n: usize) -> Dataset {
    assert!(n >= 2, "path needs two nodes");
    let graph = Graph::new(n, (1..n).map(|i| (i - 1, i))).expect("valid path");
    let labels = (0..n).map(|i| Some(usize::from(i >= n / 2))).collect();
    Dataset::new(format!("path-{n}"), graph, one_hot(n, n, |i| i), labels, 2)
        .expect("valid dataset")
}

/// Star with centre 0 and `leaves` leaves; the centre is class 0, leaves class 1.
pub fn star(leaves: usize) -> Dataset {
    let n = leaves + 1;
    let graph = Graph::new(n, (1..n).map(|i| (0, i))).expect("valid star");
    let labels = (0..n).map(|i| Some(usize::from(i > 0))).collect();
    Dataset::new(
        format!("star-{leaves}"),
        graph,
        one_hot(n, 2, |i| usize::from(i > 0)),
        labels,
        2,
    )
    .expect("valid dataset")
}

/// Parameters of a planted-partition (stochastic block) graph with noisy
/// binary attributes correlated with the class.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedConfig {
    pub nodes_per_class: usize,
    pub classes: usize,
    pub attr_dim: usize,
    /// Edge probability inside a class.
    pub p_in: f64,
    /// Edge probability across classes.
    pub p_out: f64,
    /// Probability that an attribute tied to the node's class is set.
    pub attr_on: f64,
    /// Probability that any other attribute is set.
    pub attr_off: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            nodes_per_class: 20,
            classes: 3,
            attr_dim: 12,
            p_in: 0.3,
            p_out: 0.02,
            attr_on: 0.6,
            attr_off: 0.1,
        }
    }
}

/// Node `i` belongs to class `i / nodes_per_class`; attribute `j` is tied to
/// class `j % classes`.
pub fn planted_partition(cfg: &PlantedConfig, seed: u64) -> Dataset {
    assert!(cfg.classes >= 2 && cfg.nodes_per_class >= 1 && cfg.attr_dim >= 1);
    let n = cfg.classes * cfg.nodes_per_class;
    let class = |i: usize| i / cfg.nodes_per_class;
    let mut rng = seeded(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if class(u) == class(v) {
                cfg.p_in
            } else {
                cfg.p_out
            };
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let mut attrs = Matrix::zeros(n, cfg.attr_dim);
    for i in 0..n {
        for j in 0..cfg.attr_dim {
            let p = if j % cfg.classes == class(i) {
                cfg.attr_on
            } else {
                cfg.attr_off
            };
            if rng.gen_bool(p) {
                attrs.set(i, j, 1.0);
            }
        }
    }
    let graph = Graph::new(n, edges).expect("valid planted graph");
    let labels = (0..n).map(|i| Some(class(i))).collect();
    Dataset::new(format!("planted-{n}"), graph, attrs, labels, cfg.classes).expect("valid dataset")
}
