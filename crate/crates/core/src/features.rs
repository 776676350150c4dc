//! Distance metrics, pairwise vector operations, posterior entropy and the
//! per-attack feature layout.
//!
//! Every feature is symmetric in the node pair by construction: the metrics
//! and operations only combine the two vectors through commutative
//! arithmetic, so `(u, v)` and `(v, u)` produce bitwise identical rows.

use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackId;
use crate::error::FeatureError;
use crate::graph::{AttackPair, NodeId};
use crate::numerics::{Matrix, RowSource};

/// Distance metrics, in canonical feature order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
    Correlation,
    Chebyshev,
    Braycurtis,
    Canberra,
    Manhattan,
    Sqeuclidean,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Cosine,
        Metric::Euclidean,
        Metric::Correlation,
        Metric::Chebyshev,
        Metric::Braycurtis,
        Metric::Canberra,
        Metric::Manhattan,
        Metric::Sqeuclidean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
            Metric::Correlation => "correlation",
            Metric::Chebyshev => "chebyshev",
            Metric::Braycurtis => "braycurtis",
            Metric::Canberra => "canberra",
            Metric::Manhattan => "manhattan",
            Metric::Sqeuclidean => "sqeuclidean",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

/// Distance between two equally long vectors.
///
/// Degenerate inputs: cosine with a zero vector is 1 (0 if both are zero);
/// correlation with a constant vector is 1 (0 if both are constant and
/// equal); Bray-Curtis with a zero denominator is 0 when the numerator is
/// also 0, else 1; Canberra terms of the form 0/0 contribute 0.
pub fn distance(metric: Metric, a: &[f64], b: &[f64]) -> Result<f64, FeatureError> {
    if a.len() != b.len() {
        return Err(FeatureError::Shape(a.len(), b.len()));
    }
    Ok(distance_unchecked(metric, a, b))
}

fn distance_unchecked(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    let pairs = || a.iter().zip(b).map(|(&x, &y)| (x, y));
    match metric {
        Metric::Cosine => angular(a, b, a == b),
        Metric::Correlation => {
            let ca = centered(a);
            let cb = centered(b);
            angular(&ca, &cb, a == b)
        }
        Metric::Euclidean => pairs().map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        Metric::Sqeuclidean => pairs().map(|(x, y)| (x - y) * (x - y)).sum(),
        Metric::Chebyshev => pairs().map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
        Metric::Manhattan => pairs().map(|(x, y)| (x - y).abs()).sum(),
        Metric::Braycurtis => {
            let num: f64 = pairs().map(|(x, y)| (x - y).abs()).sum();
            let den: f64 = pairs().map(|(x, y)| (x + y).abs()).sum();
            if den == 0.0 {
                if num == 0.0 {
                    0.0
                } else {
                    1.0
                }
            } else {
                num / den
            }
        }
        Metric::Canberra => pairs()
            .map(|(x, y)| {
                let den = x.abs() + y.abs();
                if den == 0.0 {
                    0.0
                } else {
                    (x - y).abs() / den
                }
            })
            .sum(),
    }
}

fn centered(a: &[f64]) -> Vec<f64> {
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    a.iter().map(|x| x - mean).collect()
}

/// `1 - a·b / (|a| |b|)`, with zero-norm conventions decided by `raw_equal`.
fn angular(a: &[f64], b: &[f64], raw_equal: bool) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>();
    let nb = b.iter().map(|x| x * x).sum::<f64>();
    match (na == 0.0, nb == 0.0) {
        (true, true) => {
            if raw_equal {
                0.0
            } else {
                1.0
            }
        }
        (true, false) | (false, true) => 1.0,
        (false, false) => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            1.0 - dot / (na * nb).sqrt()
        }
    }
}

/// Elementwise pairwise operations, in canonical feature order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseOp {
    Average,
    Hadamard,
    WeightedL1,
    WeightedL2,
}

impl PairwiseOp {
    pub const ALL: [PairwiseOp; 4] = [
        PairwiseOp::Average,
        PairwiseOp::Hadamard,
        PairwiseOp::WeightedL1,
        PairwiseOp::WeightedL2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PairwiseOp::Average => "average",
            PairwiseOp::Hadamard => "hadamard",
            PairwiseOp::WeightedL1 => "weighted_l1",
            PairwiseOp::WeightedL2 => "weighted_l2",
        }
    }

    #[inline]
    pub fn apply_scalar(self, x: f64, y: f64) -> f64 {
        match self {
            PairwiseOp::Average => (x + y) / 2.0,
            PairwiseOp::Hadamard => x * y,
            PairwiseOp::WeightedL1 => (x - y).abs(),
            PairwiseOp::WeightedL2 => (x - y) * (x - y),
        }
    }
}

pub fn pairwise_op(op: PairwiseOp, a: &[f64], b: &[f64]) -> Result<Vec<f64>, FeatureError> {
    if a.len() != b.len() {
        return Err(FeatureError::Shape(a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| op.apply_scalar(x, y))
        .collect())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// A probability vector over classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posteriors(pub Vec<f64>);

impl Posteriors {
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    /// Non-negative entries summing to 1 within `tol`.
    pub fn is_distribution(&self, tol: f64) -> bool {
        self.0.iter().all(|&p| p >= 0.0 && p.is_finite())
            && (self.0.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

/// Contiguous feature groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureBlock {
    /// `d(f(u), f(v))` for all metrics.
    PosteriorDistances,
    /// `Ψ(f(u), f(v))`, one block of `C` values per op.
    PosteriorOps,
    /// `Ψ(e(f(u)), e(f(v)))`.
    PosteriorEntropyOps,
    ReferenceDistances,
    ReferenceOps,
    ReferenceEntropyOps,
    /// `d(F_u, F_v)`.
    AttributeDistances,
    /// `Ψ(F_u, F_v)`.
    AttributeOps,
}

impl FeatureBlock {
    pub const ALL: [FeatureBlock; 8] = [
        FeatureBlock::PosteriorDistances,
        FeatureBlock::PosteriorOps,
        FeatureBlock::PosteriorEntropyOps,
        FeatureBlock::ReferenceDistances,
        FeatureBlock::ReferenceOps,
        FeatureBlock::ReferenceEntropyOps,
        FeatureBlock::AttributeDistances,
        FeatureBlock::AttributeOps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureBlock::PosteriorDistances => "posterior_distances",
            FeatureBlock::PosteriorOps => "posterior_ops",
            FeatureBlock::PosteriorEntropyOps => "posterior_entropy_ops",
            FeatureBlock::ReferenceDistances => "reference_distances",
            FeatureBlock::ReferenceOps => "reference_ops",
            FeatureBlock::ReferenceEntropyOps => "reference_entropy_ops",
            FeatureBlock::AttributeDistances => "attribute_distances",
            FeatureBlock::AttributeOps => "attribute_ops",
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            FeatureBlock::PosteriorDistances => "f_dist",
            FeatureBlock::PosteriorOps => "f_op",
            FeatureBlock::PosteriorEntropyOps => "f_ent",
            FeatureBlock::ReferenceDistances => "g_dist",
            FeatureBlock::ReferenceOps => "g_op",
            FeatureBlock::ReferenceEntropyOps => "g_ent",
            FeatureBlock::AttributeDistances => "attr_dist",
            FeatureBlock::AttributeOps => "attr_op",
        }
    }

    fn len(self, num_classes: usize, attr_dim: usize) -> usize {
        match self {
            FeatureBlock::PosteriorDistances
            | FeatureBlock::ReferenceDistances
            | FeatureBlock::AttributeDistances => Metric::ALL.len(),
            FeatureBlock::PosteriorEntropyOps | FeatureBlock::ReferenceEntropyOps => {
                PairwiseOp::ALL.len()
            }
            FeatureBlock::PosteriorOps | FeatureBlock::ReferenceOps => {
                PairwiseOp::ALL.len() * num_classes
            }
            FeatureBlock::AttributeOps => PairwiseOp::ALL.len() * attr_dim,
        }
    }
}

impl FromStr for FeatureBlock {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureBlock::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown feature group {s:?}"))
    }
}

/// Blocks used by each learned attack.
pub fn blocks_for(attack: AttackId) -> Result<&'static [FeatureBlock], FeatureError> {
    use FeatureBlock::*;
    Ok(match attack.get() {
        1 | 4 => &[PosteriorDistances, PosteriorEntropyOps],
        3 => &[PosteriorDistances, PosteriorOps, PosteriorEntropyOps],
        5 | 7 => &[
            PosteriorDistances,
            PosteriorEntropyOps,
            ReferenceDistances,
            ReferenceEntropyOps,
            AttributeDistances,
        ],
        6 => &FeatureBlock::ALL,
        other => return Err(FeatureError::Unsupervised(other)),
    })
}

/// Column layout of an attack's feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSchema {
    attack: AttackId,
    num_classes: usize,
    attr_dim: usize,
    blocks: Vec<(FeatureBlock, Range<usize>)>,
    len: usize,
}

impl FeatureSchema {
    /// `num_classes` and `attr_dim` only matter for attacks 3 and 6.
    pub fn for_attack(
        attack: AttackId,
        num_classes: usize,
        attr_dim: usize,
    ) -> Result<Self, FeatureError> {
        let mut blocks = Vec::new();
        let mut start = 0;
        for &b in blocks_for(attack)? {
            let end = start + b.len(num_classes, attr_dim);
            blocks.push((b, start..end));
            start = end;
        }
        Ok(Self {
            attack,
            num_classes,
            attr_dim,
            blocks,
            len: start,
        })
    }

    pub fn attack(&self) -> AttackId {
        self.attack
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[(FeatureBlock, Range<usize>)] {
        &self.blocks
    }

    pub fn range_of(&self, block: FeatureBlock) -> Option<Range<usize>> {
        self.blocks
            .iter()
            .find(|(b, _)| *b == block)
            .map(|(_, r)| r.clone())
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len);
        for &(b, _) in &self.blocks {
            match b {
                FeatureBlock::PosteriorDistances
                | FeatureBlock::ReferenceDistances
                | FeatureBlock::AttributeDistances => {
                    names.extend(Metric::ALL.iter().map(|m| format!("{}_{}", b.prefix(), m)))
                }
                FeatureBlock::PosteriorEntropyOps | FeatureBlock::ReferenceEntropyOps => names
                    .extend(
                        PairwiseOp::ALL
                            .iter()
                            .map(|o| format!("{}_{}", b.prefix(), o.name())),
                    ),
                FeatureBlock::PosteriorOps
                | FeatureBlock::ReferenceOps
                | FeatureBlock::AttributeOps => {
                    let width = if b == FeatureBlock::AttributeOps {
                        self.attr_dim
                    } else {
                        self.num_classes
                    };
                    for o in PairwiseOp::ALL {
                        names
                            .extend((0..width).map(|i| format!("{}_{}_{i}", b.prefix(), o.name())));
                    }
                }
            }
        }
        names
    }
}

/// Per-node inputs the adversary can compute features from. Rows are
/// indexed by node id.
#[derive(Clone, Copy, Debug)]
pub struct FeatureSource<'a> {
    /// Target (or shadow target) posteriors, `f`.
    pub posteriors: &'a Matrix,
    /// Reference model posteriors, `g`.
    pub reference: Option<&'a Matrix>,
    pub attributes: Option<&'a Matrix>,
}

/// One assembled feature row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub attack: AttackId,
    pub values: Vec<f64>,
}

/// Features of pair `(u, v)` for `attack`.
pub fn assemble(
    attack: AttackId,
    u: NodeId,
    v: NodeId,
    src: &FeatureSource<'_>,
) -> Result<FeatureVector, FeatureError> {
    let schema = FeatureSchema::for_attack(
        attack,
        src.posteriors.cols(),
        src.attributes.map_or(0, Matrix::cols),
    )?;
    let mut values = Vec::with_capacity(schema.len());
    assemble_into(&schema, u, v, src, &mut values)?;
    Ok(FeatureVector { attack, values })
}

fn require<'a>(
    m: Option<&'a Matrix>,
    attack: AttackId,
    what: &'static str,
) -> Result<&'a Matrix, FeatureError> {
    m.ok_or(FeatureError::MissingKnowledge {
        attack: attack.get(),
        missing: what,
    })
}

/// Appends the features of `(u, v)` under `schema` to `out`.
pub fn assemble_into(
    schema: &FeatureSchema,
    u: NodeId,
    v: NodeId,
    src: &FeatureSource<'_>,
    out: &mut Vec<f64>,
) -> Result<(), FeatureError> {
    let attack = schema.attack;
    for &(block, _) in &schema.blocks {
        let source = match block {
            FeatureBlock::PosteriorDistances
            | FeatureBlock::PosteriorOps
            | FeatureBlock::PosteriorEntropyOps => src.posteriors,
            FeatureBlock::ReferenceDistances
            | FeatureBlock::ReferenceOps
            | FeatureBlock::ReferenceEntropyOps => {
                require(src.reference, attack, "a reference model")?
            }
            FeatureBlock::AttributeDistances | FeatureBlock::AttributeOps => {
                require(src.attributes, attack, "node attributes")?
            }
        };
        let (a, b) = (source.row(u), source.row(v));
        match block {
            FeatureBlock::PosteriorDistances
            | FeatureBlock::ReferenceDistances
            | FeatureBlock::AttributeDistances => {
                for m in Metric::ALL {
                    out.push(distance(m, a, b)?);
                }
            }
            FeatureBlock::PosteriorEntropyOps | FeatureBlock::ReferenceEntropyOps => {
                let (ea, eb) = (entropy(a), entropy(b));
                out.extend(PairwiseOp::ALL.iter().map(|o| o.apply_scalar(ea, eb)));
            }
            FeatureBlock::PosteriorOps
            | FeatureBlock::ReferenceOps
            | FeatureBlock::AttributeOps => {
                let expected = if block == FeatureBlock::AttributeOps {
                    schema.attr_dim
                } else {
                    schema.num_classes
                };
                if a.len() != expected {
                    return Err(FeatureError::Shape(a.len(), expected));
                }
                for o in PairwiseOp::ALL {
                    out.extend(a.iter().zip(b).map(|(&x, &y)| o.apply_scalar(x, y)));
                }
            }
        }
    }
    Ok(())
}

/// Feature rows stored sparsely; wide attribute blocks are mostly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl FeatureTable {
    pub fn new(n_cols: usize) -> Self {
        Self {
            n_cols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Features of every pair under `schema`.
    pub fn build(
        schema: &FeatureSchema,
        pairs: &[AttackPair],
        src: &FeatureSource<'_>,
    ) -> Result<Self, FeatureError> {
        let mut table = Self::new(schema.len());
        let mut row = Vec::with_capacity(schema.len());
        for p in pairs {
            row.clear();
            assemble_into(schema, p.u, p.v, src, &mut row)?;
            table.push_row(&row);
        }
        Ok(table)
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.n_cols, "feature row width");
        for (i, &x) in row.iter().enumerate() {
            if x != 0.0 {
                self.indices.push(i as u32);
                self.values.push(x);
            }
        }
        self.indptr.push(self.indices.len());
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &FeatureTable) -> Result<FeatureTable, FeatureError> {
        if self.n_cols != other.n_cols {
            return Err(FeatureError::Shape(self.n_cols, other.n_cols));
        }
        let offset = self.indices.len();
        let mut out = self.clone();
        out.indptr
            .extend(other.indptr[1..].iter().map(|&p| p + offset));
        out.indices.extend_from_slice(&other.indices);
        out.values.extend_from_slice(&other.values);
        Ok(out)
    }

    /// Copy with every column outside `keep` set to zero.
    pub fn masked(&self, keep: &[Range<usize>]) -> FeatureTable {
        let mut out = Self::new(self.n_cols);
        for r in 0..self.n_rows() {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k] as usize;
                if keep.iter().any(|rg| rg.contains(&c)) {
                    out.indices.push(self.indices[k]);
                    out.values.push(self.values[k]);
                }
            }
            out.indptr.push(out.indices.len());
        }
        out
    }

    pub fn dense_row(&self, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        self.fill_row(r, &mut out);
        out
    }

    /// Writes `u,v,linked,<columns>` rows.
    pub fn write_csv<W: Write>(
        &self,
        schema: &FeatureSchema,
        pairs: &[AttackPair],
        mut w: W,
    ) -> std::io::Result<()> {
        writeln!(w, "u,v,linked,{}", schema.column_names().join(","))?;
        for (r, p) in pairs.iter().enumerate() {
            let row: Vec<String> = self.dense_row(r).iter().map(|x| x.to_string()).collect();
            writeln!(
                w,
                "{},{},{},{}",
                p.u,
                p.v,
                u8::from(p.linked),
                row.join(",")
            )?;
        }
        Ok(())
    }
}

impl RowSource for FeatureTable {
    fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    fn n_cols(&self) -> usize {
        self.n_cols
    }

    fn fill_row(&self, r: usize, out: &mut [f64]) {
        out.fill(0.0);
        for k in self.indptr[r]..self.indptr[r + 1] {
            out[self.indices[k] as usize] = self.values[k];
        }
    }
}
