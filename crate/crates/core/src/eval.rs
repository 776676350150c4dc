//! Metrics, the link-prediction baseline, feature ablation, distance-bin
//! analysis and multi-seed aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{AttackScores, TrainedAttack};
use crate::error::{AttackError, EvalError};
use crate::features::{FeatureBlock, FeatureSchema, FeatureTable};
use crate::graph::{AttackPair, Graph};
use crate::models::{train_mlp, TrainConfig};
use crate::numerics::Matrix;

/// Area under the ROC curve via the Mann-Whitney statistic; tied scores
/// share their average rank, i.e. count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Length(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::Undefined("non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::Undefined(
            "AUC needs both positive and negative pairs".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Standard definitions with "linked" as the positive class. A zero
/// denominator yields 0 for that metric.
pub fn precision_recall_f1(
    predicted: &[bool],
    truth: &[bool],
) -> Result<PrecisionRecall, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::Length(predicted.len(), truth.len()));
    }
    let count = |p: bool, t: bool| {
        predicted
            .iter()
            .zip(truth)
            .filter(|&(&a, &b)| a == p && b == t)
            .count() as f64
    };
    let (tp, fp, fn_) = (count(true, true), count(true, false), count(false, true));
    let ratio = |num: f64, den: f64, what: &str| {
        if den == 0.0 {
            log::warn!("{what} undefined (zero denominator), reporting 0");
            0.0
        } else {
            num / den
        }
    };
    let precision = ratio(tp, tp + fp, "precision");
    let recall = ratio(tp, tp + fn_, "recall");
    let f1 = ratio(2.0 * precision * recall, precision + recall, "F1");
    Ok(PrecisionRecall {
        precision,
        recall,
        f1,
    })
}

/// Common neighbours, Jaccard index and preferential attachment of `(u, v)`.
/// The edge `(u, v)` itself is ignored, so linked training pairs look like
/// test pairs, whose edges are absent from the partial graph.
pub fn baseline_features(graph: &Graph, u: usize, v: usize) -> [f64; 3] {
    let nu: BTreeSet<usize> = graph
        .neighbors(u)
        .iter()
        .copied()
        .filter(|&x| x != v)
        .collect();
    let nv: BTreeSet<usize> = graph
        .neighbors(v)
        .iter()
        .copied()
        .filter(|&x| x != u)
        .collect();
    let common = nu.intersection(&nv).count();
    let union = nu.len() + nv.len() - common;
    let jaccard = if union == 0 {
        0.0
    } else {
        common as f64 / union as f64
    };
    [common as f64, jaccard, (nu.len() * nv.len()) as f64]
}

/// Link-prediction baseline: an MLP over [`baseline_features`] computed on
/// the partial graph, trained on `train_pairs`.
pub fn baseline_link_prediction(
    partial_graph: &Graph,
    train_pairs: &[AttackPair],
    test_pairs: &[AttackPair],
    config: &TrainConfig,
) -> Result<AttackScores, AttackError> {
    let rows = |pairs: &[AttackPair]| -> Matrix {
        let data = pairs
            .iter()
            .flat_map(|p| baseline_features(partial_graph, p.u, p.v))
            .collect();
        Matrix::from_vec(pairs.len(), 3, data).expect("three features per pair")
    };
    let x_train = rows(train_pairs);
    let labels: Vec<usize> = train_pairs.iter().map(|p| usize::from(p.linked)).collect();
    if !(labels.contains(&0) && labels.contains(&1)) {
        return Err(crate::error::ModelError::SingleClass.into());
    }
    let ids: Vec<usize> = (0..train_pairs.len()).collect();
    let (model, _) = train_mlp(&x_train, &ids, &labels, 2, config)?;
    let p = model.predict_matrix(&rows(test_pairs))?;
    Ok(AttackScores {
        scores: (0..p.rows()).map(|i| p.get(i, 1)).collect(),
        labels: Some((0..p.rows()).map(|i| p.argmax_row(i) == 1).collect()),
    })
}

/// Named feature groups for ablation. Accepts `all`, `none`, the three
/// sources `posterior`, `reference`, `attribute`, any block name, or a
/// comma-separated union of these.
pub fn parse_group(spec: &str) -> Result<Vec<FeatureBlock>, EvalError> {
    use FeatureBlock::*;
    let mut out: Vec<FeatureBlock> = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let blocks: Vec<FeatureBlock> = match part {
            "all" => FeatureBlock::ALL.to_vec(),
            "none" => Vec::new(),
            "posterior" => vec![PosteriorDistances, PosteriorOps, PosteriorEntropyOps],
            "reference" => vec![ReferenceDistances, ReferenceOps, ReferenceEntropyOps],
            "attribute" => vec![AttributeDistances, AttributeOps],
            other => vec![other.parse().map_err(EvalError::Config)?],
        };
        for b in blocks {
            if !out.contains(&b) {
                out.push(b);
            }
        }
    }
    if spec.trim().is_empty() {
        return Err(EvalError::Config("empty feature group".into()));
    }
    Ok(out)
}

/// Column ranges of `schema` belonging to `group`.
pub fn group_ranges(schema: &FeatureSchema, group: &[FeatureBlock]) -> Vec<Range<usize>> {
    schema
        .blocks()
        .iter()
        .filter(|(b, _)| group.contains(b))
        .map(|(_, r)| r.clone())
        .collect()
}

/// Scores test features with every column outside `group` set to zero; the
/// model itself was trained on full features.
pub fn ablate(
    trained: &TrainedAttack,
    schema: &FeatureSchema,
    test_features: &FeatureTable,
    group: &[FeatureBlock],
) -> Result<AttackScores, AttackError> {
    let masked = test_features.masked(&group_ranges(schema, group));
    trained.scores(&masked)
}

/// AUC of pairs whose distance falls in one bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinResult {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub positives: usize,
    /// `None` when the bin lacks one of the classes.
    pub auc: Option<f64>,
}

/// Edges `0, width, 2*width, ...` covering `max_distance`.
pub fn default_bin_edges(max_distance: f64, width: f64) -> Vec<f64> {
    let bins = ((max_distance / width).floor() as usize + 1).max(1);
    (0..=bins).map(|i| i as f64 * width).collect()
}

/// Groups pairs into `[edges[i], edges[i+1])` by distance (the last bin is
/// closed) and computes AUC per bin.
pub fn distance_bin_analysis(
    distances: &[f64],
    scores: &[f64],
    labels: &[bool],
    edges: &[f64],
) -> Result<Vec<BinResult>, EvalError> {
    if distances.len() != scores.len() {
        return Err(EvalError::Length(distances.len(), scores.len()));
    }
    if scores.len() != labels.len() {
        return Err(EvalError::Length(scores.len(), labels.len()));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::Config(
            "bin edges must be strictly increasing, at least two".into(),
        ));
    }
    let nb = edges.len() - 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nb];
    for (i, &d) in distances.iter().enumerate() {
        let last = edges[nb];
        if d < edges[0] || d > last {
            continue;
        }
        let b = if d == last {
            nb - 1
        } else {
            edges.partition_point(|&e| e <= d) - 1
        };
        members[b].push(i);
    }
    Ok(members
        .iter()
        .enumerate()
        .map(|(b, idx)| {
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            BinResult {
                lower: edges[b],
                upper: edges[b + 1],
                count: idx.len(),
                positives: l.iter().filter(|&&x| x).count(),
                auc: auc(&s, &l).ok(),
            }
        })
        .collect())
}

/// One attack (or baseline) evaluation for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// `attack`, `baseline` or `ablation`.
    pub kind: String,
    pub attack: u8,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shadow: Option<String>,
    pub seed: u64,
    pub auc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defense_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Wall-clock seconds. Kept out of the serialized row so reruns produce
    /// identical output; see [`write_timings`].
    #[serde(skip)]
    pub runtime_secs: f64,
    pub config_hash: String,
}

impl ExperimentResult {
    /// Identity of the aggregation cell this result belongs to.
    pub fn cell_key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{}|{}|{}",
            self.kind,
            self.attack,
            self.dataset,
            self.shadow.as_deref().unwrap_or(""),
            self.metric.as_deref().unwrap_or(""),
            self.variant.as_deref().unwrap_or(""),
            self.defense_k.map(|k| k.to_string()).unwrap_or_default(),
            self.group.as_deref().unwrap_or(""),
            self.config_hash
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample (n - 1) standard deviation; std is 0 for one value.
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Stat { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub kind: String,
    pub attack: u8,
    pub dataset: String,
    pub shadow: Option<String>,
    pub metric: Option<String>,
    pub variant: Option<String>,
    pub defense_k: Option<usize>,
    pub group: Option<String>,
    pub config_hash: String,
    pub n_seeds: usize,
    /// Set when only one seed contributed, so `std` carries no information.
    pub single_seed: bool,
    pub auc: Stat,
    pub precision: Option<Stat>,
    pub recall: Option<Stat>,
    pub f1: Option<Stat>,
}

/// Mean and sample standard deviation over seeds of one configuration.
pub fn aggregate(results: &[ExperimentResult]) -> Result<AggregateResult, EvalError> {
    let first = results
        .first()
        .ok_or_else(|| EvalError::Aggregation("no results".into()))?;
    if let Some(r) = results.iter().find(|r| r.config_hash != first.config_hash) {
        return Err(EvalError::Aggregation(format!(
            "mixed config hashes {} and {}",
            first.config_hash, r.config_hash
        )));
    }
    if let Some(r) = results.iter().find(|r| r.cell_key() != first.cell_key()) {
        return Err(EvalError::Aggregation(format!(
            "mixed experiment cells {:?} and {:?}",
            first.cell_key(),
            r.cell_key()
        )));
    }
    let opt = |f: fn(&ExperimentResult) -> Option<f64>| -> Option<Stat> {
        let v: Option<Vec<f64>> = results.iter().map(f).collect();
        v.and_then(|v| Stat::of(&v))
    };
    let aucs: Vec<f64> = results.iter().map(|r| r.auc).collect();
    Ok(AggregateResult {
        kind: first.kind.clone(),
        attack: first.attack,
        dataset: first.dataset.clone(),
        shadow: first.shadow.clone(),
        metric: first.metric.clone(),
        variant: first.variant.clone(),
        defense_k: first.defense_k,
        group: first.group.clone(),
        config_hash: first.config_hash.clone(),
        n_seeds: results.len(),
        single_seed: results.len() == 1,
        auc: Stat::of(&aucs).expect("non-empty"),
        precision: opt(|r| r.precision),
        recall: opt(|r| r.recall),
        f1: opt(|r| r.f1),
    })
}

/// Aggregates every experiment cell separately, in cell-key order.
pub fn aggregate_all(results: &[ExperimentResult]) -> Result<Vec<AggregateResult>, EvalError> {
    let mut cells: BTreeMap<String, Vec<ExperimentResult>> = BTreeMap::new();
    for r in results {
        cells.entry(r.cell_key()).or_default().push(r.clone());
    }
    cells.values().map(|v| aggregate(v)).collect()
}

/// First 16 hex digits of the SHA-256 of the value's JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&json)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn write_jsonl<W: Write>(out: &mut W, results: &[ExperimentResult]) -> std::io::Result<()> {
    for r in results {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<ExperimentResult>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Config(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| EvalError::Config(format!("results line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// Runtime per result, one JSON object per line.
pub fn write_timings<W: Write>(out: &mut W, results: &[ExperimentResult]) -> std::io::Result<()> {
    for r in results {
        let row = serde_json::json!({
            "cell": r.cell_key(),
            "seed": r.seed,
            "runtime_secs": r.runtime_secs,
        });
        writeln!(out, "{row}")?;
    }
    Ok(())
}

fn fmt_opt_stat(s: Option<Stat>) -> (String, String) {
    s.map(|s| (format!("{:.6}", s.mean), format!("{:.6}", s.std)))
        .unwrap_or_default()
}

/// One CSV row per aggregated cell.
pub fn write_aggregate_csv<W: Write>(out: &mut W, rows: &[AggregateResult]) -> std::io::Result<()> {
    writeln!(
        out,
        "kind,attack,dataset,shadow,metric,variant,defense_k,group,n_seeds,auc_mean,auc_std,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std,config_hash"
    )?;
    for r in rows {
        let (pm, ps) = fmt_opt_stat(r.precision);
        let (rm, rs) = fmt_opt_stat(r.recall);
        let (fm, fs) = fmt_opt_stat(r.f1);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{:.6},{:.6},{pm},{ps},{rm},{rs},{fm},{fs},{}",
            r.kind,
            r.attack,
            r.dataset,
            r.shadow.as_deref().unwrap_or(""),
            r.metric.as_deref().unwrap_or(""),
            r.variant.as_deref().unwrap_or(""),
            r.defense_k.map(|k| k.to_string()).unwrap_or_default(),
            r.group.as_deref().unwrap_or(""),
            r.n_seeds,
            r.auc.mean,
            r.auc.std,
            r.config_hash
        )?;
    }
    Ok(())
}
