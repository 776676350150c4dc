//! The eight link-stealing attacks. The adversary's knowledge, a subset of
//! {target attributes F, partial graph A*, shadow dataset D'}, selects the
//! attack:
//!
//! | id | F | A* | D' | kind |
//! |----|---|----|----|------|
//! | 0  |   |    |    | posterior distance |
//! | 1  |   |    | x  | transfer from shadow |
//! | 2  | x |    |    | distance over posteriors/attributes/reference |
//! | 3  |   | x  |    | supervised on partial graph |
//! | 4  |   | x  | x  | shadow + partial graph |
//! | 5  | x |    | x  | transfer with reference models |
//! | 6  | x | x  |    | supervised, full feature set |
//! | 7  | x | x  | x  | everything |
//!
//! All observations of the target go through a [`PosteriorOracle`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AttackError, ModelError};
use crate::features::{distance, FeatureSchema, FeatureSource, FeatureTable, Metric};
use crate::graph::{build_attack_pairs, sample_labeled_nodes, AttackPair, Dataset, NodeId};
use crate::models::{
    train_mlp, train_reference, MlpModel, ModelKind, NodeClassifier, TargetModel, TrainConfig,
};
use crate::numerics::Matrix;
use crate::oracle::{collect_posteriors, PosteriorOracle};
use crate::rng::derive_seed;

/// Attack number 0 to 7.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct AttackId(u8);

impl AttackId {
    pub const ALL: [AttackId; 8] = [
        AttackId(0),
        AttackId(1),
        AttackId(2),
        AttackId(3),
        AttackId(4),
        AttackId(5),
        AttackId(6),
        AttackId(7),
    ];

    pub fn new(id: u8) -> Option<Self> {
        (id < 8).then_some(Self(id))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn knowledge(self) -> KnowledgeTriplet {
        let (f, a, d) = match self.0 {
            0 => (false, false, false),
            1 => (false, false, true),
            2 => (true, false, false),
            3 => (false, true, false),
            4 => (false, true, true),
            5 => (true, false, true),
            6 => (true, true, false),
            _ => (true, true, true),
        };
        KnowledgeTriplet {
            has_attributes: f,
            has_partial_graph: a,
            has_shadow: d,
        }
    }

    /// Attacks 0 and 2 threshold a distance; the rest train an MLP.
    pub fn is_unsupervised(self) -> bool {
        matches!(self.0, 0 | 2)
    }

    /// Attacks whose features include reference-model posteriors.
    pub fn uses_reference(self) -> bool {
        matches!(self.0, 5..=7)
    }
}

impl TryFrom<u8> for AttackId {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        AttackId::new(v).ok_or_else(|| format!("attack id {v} outside 0..=7"))
    }
}

impl From<AttackId> for u8 {
    fn from(a: AttackId) -> u8 {
        a.0
    }
}

impl fmt::Display for AttackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "attack-{}", self.0)
    }
}

impl FromStr for AttackId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .trim()
            .trim_start_matches("attack-")
            .trim_start_matches("attack");
        digits
            .parse::<u8>()
            .map_err(|_| format!("invalid attack id {s:?}"))
            .and_then(AttackId::try_from)
    }
}

/// What the adversary holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KnowledgeTriplet {
    pub has_attributes: bool,
    pub has_partial_graph: bool,
    pub has_shadow: bool,
}

pub fn resolve_attack(k: KnowledgeTriplet) -> AttackId {
    let id = match (k.has_attributes, k.has_partial_graph, k.has_shadow) {
        (false, false, false) => 0,
        (false, false, true) => 1,
        (true, false, false) => 2,
        (false, true, false) => 3,
        (false, true, true) => 4,
        (true, false, true) => 5,
        (true, true, false) => 6,
        (true, true, true) => 7,
    };
    AttackId(id)
}

/// Quantity thresholded by Attack-2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attack2Variant {
    /// `d(f(u), f(v))`
    TargetPosteriors,
    /// `d(F_u, F_v)`
    Attributes,
    /// `d(f(u), f(v)) - d(g(u), g(v))`
    Difference,
    /// `d(g(u), g(v))`
    ReferencePosteriors,
}

impl Attack2Variant {
    pub const ALL: [Attack2Variant; 4] = [
        Attack2Variant::TargetPosteriors,
        Attack2Variant::Attributes,
        Attack2Variant::Difference,
        Attack2Variant::ReferencePosteriors,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attack2Variant::TargetPosteriors => "target-posteriors",
            Attack2Variant::Attributes => "attributes",
            Attack2Variant::Difference => "difference",
            Attack2Variant::ReferencePosteriors => "reference-posteriors",
        }
    }

    pub fn needs_reference(self) -> bool {
        matches!(
            self,
            Attack2Variant::Difference | Attack2Variant::ReferencePosteriors
        )
    }

    /// Attribute distance for low-dimensional attributes, posterior
    /// distance once attributes reach 500 dimensions.
    pub fn default_for(attr_dim: usize) -> Self {
        if attr_dim >= 500 {
            Attack2Variant::TargetPosteriors
        } else {
            Attack2Variant::Attributes
        }
    }
}

impl fmt::Display for Attack2Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attack2Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Attack2Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown Attack-2 variant {s:?}"))
    }
}

/// Scores of test pairs; higher means more likely linked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackScores {
    pub scores: Vec<f64>,
    /// Hard decisions, `true` = linked.
    pub labels: Option<Vec<bool>>,
}

/// Models and knobs used while mounting an attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub metric: Metric,
    /// Attack-2 quantity; `None` picks by attribute dimension.
    pub variant: Option<Attack2Variant>,
    /// Architecture of the shadow target model.
    pub shadow_kind: ModelKind,
    /// Hyperparameters of the shadow target model.
    pub shadow_model: TrainConfig,
    /// Hyperparameters of the reference models `g` and `g'`.
    pub reference_model: TrainConfig,
    pub attack_model: TrainConfig,
    /// Labeled fraction of the shadow dataset used to train `f'` and `g'`.
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Correlation,
            variant: None,
            shadow_kind: ModelKind::Gcn,
            shadow_model: TrainConfig::target(0),
            reference_model: TrainConfig::reference(0),
            attack_model: TrainConfig::attack(0),
            labeled_fraction: 0.1,
            seed: 0,
        }
    }
}

impl AttackConfig {
    fn seeded(&self, base: &TrainConfig, tag: &str) -> TrainConfig {
        base.clone().with_seed(derive_seed(self.seed, tag))
    }
}

/// Node ids with their known class labels.
#[derive(Clone, Copy, Debug)]
pub struct LabeledNodes<'a> {
    pub ids: &'a [NodeId],
    pub labels: &'a [usize],
}

/// Everything the adversary holds about the target.
#[derive(Clone, Copy)]
pub struct AttackContext<'a> {
    pub oracle: &'a dyn PosteriorOracle,
    /// Target node attributes (F).
    pub attributes: Option<&'a Matrix>,
    /// Labels of a few target nodes, used to train the reference model.
    pub labeled: Option<LabeledNodes<'a>>,
    /// Pairs with known link status (A*).
    pub train_pairs: Option<&'a [AttackPair]>,
    /// Shadow dataset (D').
    pub shadow: Option<&'a Dataset>,
}

impl<'a> AttackContext<'a> {
    pub fn new(oracle: &'a dyn PosteriorOracle) -> Self {
        Self {
            oracle,
            attributes: None,
            labeled: None,
            train_pairs: None,
            shadow: None,
        }
    }

    pub fn knowledge(&self) -> KnowledgeTriplet {
        KnowledgeTriplet {
            has_attributes: self.attributes.is_some(),
            has_partial_graph: self.train_pairs.is_some(),
            has_shadow: self.shadow.is_some(),
        }
    }
}

fn knowledge_err(attack: AttackId, message: impl Into<String>) -> AttackError {
    AttackError::Knowledge {
        attack: attack.get(),
        message: message.into(),
    }
}

/// Optimal two-cluster split of 1-D values; the lower-mean cluster is
/// `true` (linked).
///
/// In one dimension the optimal 2-means partition is a threshold split of
/// the sorted values, so every split between distinct values is scored and
/// the one with the least within-cluster sum of squares wins (ties go to the
/// lowest threshold). The result is a fixed point of Lloyd's iteration.
pub fn kmeans_binarize(distances: &[f64]) -> Result<Vec<bool>, AttackError> {
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(AttackError::Config(
            "k-means input contains non-finite values".into(),
        ));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n < 2 || sorted[0] == sorted[n - 1] {
        return Err(AttackError::DegenerateInput);
    }
    // Centre first to limit cancellation in the prefix sums.
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = sorted.iter().map(|x| x - mean).collect();
    let total: f64 = centred.iter().sum();
    let total_sq: f64 = centred.iter().map(|x| x * x).sum();
    let (mut s, mut sq) = (0.0, 0.0);
    let mut best: Option<(f64, usize)> = None;
    for k in 1..n {
        s += centred[k - 1];
        sq += centred[k - 1] * centred[k - 1];
        if sorted[k - 1] == sorted[k] {
            continue;
        }
        let (nl, nr) = (k as f64, (n - k) as f64);
        let sse = (sq - s * s / nl) + ((total_sq - sq) - (total - s) * (total - s) / nr);
        if best.is_none_or(|(b, _)| sse < b) {
            best = Some((sse, k));
        }
    }
    let (_, k) = best.expect("at least two distinct values");
    let threshold = sorted[k - 1];
    Ok(distances.iter().map(|&d| d <= threshold).collect())
}

fn distance_scores(distances: Vec<f64>) -> AttackScores {
    let labels = match kmeans_binarize(&distances) {
        Ok(l) => Some(l),
        Err(e) => {
            log::warn!("no hard labels: {e}");
            None
        }
    };
    AttackScores {
        scores: distances.iter().map(|d| -d).collect(),
        labels,
    }
}

fn pair_distances(
    m: &Matrix,
    pairs: &[AttackPair],
    metric: Metric,
) -> Result<Vec<f64>, AttackError> {
    pairs
        .iter()
        .map(|p| distance(metric, m.row(p.u), m.row(p.v)).map_err(AttackError::from))
        .collect()
}

fn endpoints(pairs: &[AttackPair]) -> impl Iterator<Item = NodeId> + '_ {
    pairs.iter().flat_map(|p| [p.u, p.v])
}

/// Attack-0: negated posterior distance.
pub fn attack0_scores(
    oracle: &dyn PosteriorOracle,
    pairs: &[AttackPair],
    metric: Metric,
) -> Result<AttackScores, AttackError> {
    let post = collect_posteriors(oracle, endpoints(pairs))?;
    Ok(distance_scores(pair_distances(&post, pairs, metric)?))
}

/// Reference model `g` over the target attributes, evaluated on all nodes.
pub fn reference_posteriors(
    attributes: &Matrix,
    labeled: LabeledNodes<'_>,
    num_classes: usize,
    config: &TrainConfig,
) -> Result<Matrix, AttackError> {
    let g = train_reference(attributes, labeled.ids, labeled.labels, num_classes, config)?;
    Ok(g.predict_rows(attributes)?)
}

/// Attack-2: negated distance of the chosen quantity.
pub fn attack2_scores(
    oracle: &dyn PosteriorOracle,
    attributes: &Matrix,
    labeled: Option<LabeledNodes<'_>>,
    pairs: &[AttackPair],
    variant: Attack2Variant,
    metric: Metric,
    reference_config: &TrainConfig,
) -> Result<AttackScores, AttackError> {
    let attack = AttackId(2);
    let reference = || -> Result<Matrix, AttackError> {
        let labeled = labeled
            .ok_or_else(|| knowledge_err(attack, "the reference model needs labeled nodes"))?;
        let c = oracle.meta()?.num_classes;
        reference_posteriors(attributes, labeled, c, reference_config)
    };
    let distances = match variant {
        Attack2Variant::TargetPosteriors => {
            let post = collect_posteriors(oracle, endpoints(pairs))?;
            pair_distances(&post, pairs, metric)?
        }
        Attack2Variant::Attributes => pair_distances(attributes, pairs, metric)?,
        Attack2Variant::ReferencePosteriors => pair_distances(&reference()?, pairs, metric)?,
        Attack2Variant::Difference => {
            let post = collect_posteriors(oracle, endpoints(pairs))?;
            let df = pair_distances(&post, pairs, metric)?;
            let dg = pair_distances(&reference()?, pairs, metric)?;
            df.iter().zip(&dg).map(|(a, b)| a - b).collect()
        }
    };
    Ok(distance_scores(distances))
}

/// Per-node inputs for feature assembly on one graph: posteriors of the
/// (shadow) target, optionally reference posteriors and attributes.
#[derive(Clone, Debug)]
pub struct NodeView<'a> {
    pub posteriors: Matrix,
    pub reference: Option<Matrix>,
    pub attributes: Option<&'a Matrix>,
}

impl NodeView<'_> {
    pub fn source(&self) -> FeatureSource<'_> {
        FeatureSource {
            posteriors: &self.posteriors,
            reference: self.reference.as_ref(),
            attributes: self.attributes,
        }
    }

    pub fn schema(&self, attack: AttackId) -> Result<FeatureSchema, AttackError> {
        Ok(FeatureSchema::for_attack(
            attack,
            self.posteriors.cols(),
            self.attributes.map_or(0, Matrix::cols),
        )?)
    }

    /// Feature rows and 0/1 link labels of `pairs`.
    pub fn rows(
        &self,
        attack: AttackId,
        pairs: &[AttackPair],
    ) -> Result<TrainingRows, AttackError> {
        let schema = self.schema(attack)?;
        Ok(TrainingRows {
            table: FeatureTable::build(&schema, pairs, &self.source())?,
            labels: pairs.iter().map(|p| usize::from(p.linked)).collect(),
        })
    }
}

/// Observes the target for `attack`: queries the oracle for every endpoint
/// of `pairs` and trains the reference model when the attack needs one.
pub fn observe_target<'a>(
    attack: AttackId,
    ctx: &AttackContext<'a>,
    pairs: impl IntoIterator<Item = &'a AttackPair>,
    config: &AttackConfig,
) -> Result<NodeView<'a>, AttackError> {
    let posteriors = collect_posteriors(ctx.oracle, pairs.into_iter().flat_map(|p| [p.u, p.v]))?;
    let reference = if attack.uses_reference() {
        let attrs = ctx
            .attributes
            .ok_or_else(|| knowledge_err(attack, "needs target attributes"))?;
        let labeled = ctx
            .labeled
            .ok_or_else(|| knowledge_err(attack, "the reference model needs labeled nodes"))?;
        let cfg = config.seeded(&config.reference_model, "reference");
        Some(reference_posteriors(
            attrs,
            labeled,
            posteriors.cols(),
            &cfg,
        )?)
    } else {
        None
    };
    Ok(NodeView {
        posteriors,
        reference,
        attributes: if attack.uses_reference() {
            ctx.attributes
        } else {
            None
        },
    })
}

/// Attack-training rows: a sparse feature table with 0/1 link labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRows {
    pub table: FeatureTable,
    pub labels: Vec<usize>,
}

impl TrainingRows {
    pub fn empty(n_cols: usize) -> Self {
        Self {
            table: FeatureTable::new(n_cols),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &TrainingRows) -> Result<TrainingRows, AttackError> {
        Ok(TrainingRows {
            table: self.table.concat(&other.table)?,
            labels: self.labels.iter().chain(&other.labels).copied().collect(),
        })
    }
}

/// A trained attack classifier together with its feature layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedAttack {
    pub attack: AttackId,
    pub model: MlpModel,
    pub training_rows: usize,
}

impl TrainedAttack {
    /// Probability of "linked" for every row of `features`.
    pub fn score(&self, features: &FeatureTable) -> Result<Vec<f64>, AttackError> {
        let p = self.model.predict_rows(features)?;
        Ok((0..p.rows()).map(|i| p.get(i, 1)).collect())
    }

    /// Scores plus argmax decisions.
    pub fn scores(&self, features: &FeatureTable) -> Result<AttackScores, AttackError> {
        let p = self.model.predict_rows(features)?;
        Ok(AttackScores {
            scores: (0..p.rows()).map(|i| p.get(i, 1)).collect(),
            labels: Some((0..p.rows()).map(|i| p.argmax_row(i) == 1).collect()),
        })
    }
}

/// Trains the attack MLP on `rows`; both link classes must be present.
pub fn fit_attack_model(
    attack: AttackId,
    rows: &TrainingRows,
    config: &TrainConfig,
) -> Result<TrainedAttack, AttackError> {
    let has = |c| rows.labels.contains(&c);
    if !(has(0) && has(1)) {
        return Err(ModelError::SingleClass.into());
    }
    let ids: Vec<usize> = (0..rows.len()).collect();
    let (model, report) = train_mlp(&rows.table, &ids, &rows.labels, 2, config)?;
    log::debug!(
        "{attack}: attack model loss {:.4} -> {:.4} on {} rows",
        report.initial_loss,
        report.final_loss,
        rows.len()
    );
    Ok(TrainedAttack {
        attack,
        model,
        training_rows: rows.len(),
    })
}

fn require_attack(attack: AttackId, allowed: &[u8], what: &str) -> Result<(), AttackError> {
    if allowed.contains(&attack.get()) {
        Ok(())
    } else {
        Err(AttackError::Config(format!(
            "{attack} is not a {what} attack"
        )))
    }
}

/// Attacks 3 and 6: learn from the partial graph's labeled pairs.
pub fn train_supervised_attack(
    attack: AttackId,
    view: &NodeView<'_>,
    train_pairs: &[AttackPair],
    config: &AttackConfig,
) -> Result<TrainedAttack, AttackError> {
    require_attack(attack, &[3, 6], "supervised")?;
    let rows = view.rows(attack, train_pairs)?;
    fit_attack_model(
        attack,
        &rows,
        &config.seeded(&config.attack_model, "attack-model"),
    )
}

/// Trains the shadow target `f'` (and `g'` for attacks 5 and 7) on the
/// shadow dataset and derives labeled rows from all its attack pairs.
pub fn shadow_training_rows(
    attack: AttackId,
    shadow: &Dataset,
    config: &AttackConfig,
) -> Result<TrainingRows, AttackError> {
    require_attack(attack, &[1, 4, 5, 7], "transferring")?;
    let labeled = sample_labeled_nodes(
        shadow,
        config.labeled_fraction,
        derive_seed(config.seed, "shadow-labels"),
    )?;
    let labels = shadow.labels_of(&labeled)?;
    let f_cfg = config.seeded(&config.shadow_model, "shadow-target");
    let (f_shadow, _) = TargetModel::train(config.shadow_kind, shadow, &labeled, &f_cfg)?;
    let reference = if attack.uses_reference() {
        let g_cfg = config.seeded(&config.reference_model, "shadow-reference");
        let l = LabeledNodes {
            ids: &labeled,
            labels: &labels,
        };
        Some(reference_posteriors(
            &shadow.attributes,
            l,
            shadow.num_classes,
            &g_cfg,
        )?)
    } else {
        None
    };
    let view = NodeView {
        posteriors: f_shadow.posteriors(),
        reference,
        attributes: attack.uses_reference().then_some(&shadow.attributes),
    };
    let pairs = build_attack_pairs(&shadow.graph, derive_seed(config.seed, "shadow-pairs"))?;
    view.rows(attack, pairs.pairs())
}

/// Attacks 1 and 5: learn on the shadow dataset only.
pub fn train_transfer_attack(
    attack: AttackId,
    shadow: &Dataset,
    config: &AttackConfig,
) -> Result<TrainedAttack, AttackError> {
    require_attack(attack, &[1, 5], "pure transfer")?;
    let rows = shadow_training_rows(attack, shadow, config)?;
    fit_attack_model(
        attack,
        &rows,
        &config.seeded(&config.attack_model, "attack-model"),
    )
}

/// Attacks 4 and 7: learn on shadow rows together with the target's
/// partial-graph rows, using the dimension-consistent transfer schema.
pub fn train_combined_attack(
    attack: AttackId,
    shadow_rows: &TrainingRows,
    view: &NodeView<'_>,
    train_pairs: &[AttackPair],
    config: &AttackConfig,
) -> Result<TrainedAttack, AttackError> {
    require_attack(attack, &[4, 7], "combined")?;
    let target_rows = view.rows(attack, train_pairs)?;
    let rows = shadow_rows.concat(&target_rows)?;
    fit_attack_model(
        attack,
        &rows,
        &config.seeded(&config.attack_model, "attack-model"),
    )
}

/// Result of one attack run.
#[derive(Clone, Debug)]
pub struct AttackOutcome {
    pub attack: AttackId,
    pub scores: AttackScores,
    /// Target posteriors for all queried nodes (zero rows elsewhere).
    pub posteriors: Option<Matrix>,
    /// The attack classifier, for learned attacks.
    pub trained: Option<TrainedAttack>,
    /// Test-pair features, for learned attacks.
    pub test_features: Option<FeatureTable>,
    /// Attack-2 quantity that was used.
    pub variant: Option<Attack2Variant>,
}

/// Mounts the attack selected by `knowledge` and scores `test_pairs`.
pub fn run_attack(
    knowledge: KnowledgeTriplet,
    ctx: &AttackContext<'_>,
    test_pairs: &[AttackPair],
    config: &AttackConfig,
) -> Result<AttackOutcome, AttackError> {
    let attack = resolve_attack(knowledge);
    if ctx.knowledge() != knowledge {
        return Err(knowledge_err(
            attack,
            format!(
                "context holds {:?}, attack expects {knowledge:?}",
                ctx.knowledge()
            ),
        ));
    }
    let mut outcome = AttackOutcome {
        attack,
        scores: AttackScores {
            scores: Vec::new(),
            labels: None,
        },
        posteriors: None,
        trained: None,
        test_features: None,
        variant: None,
    };
    match attack.get() {
        0 => {
            let post = collect_posteriors(ctx.oracle, endpoints(test_pairs))?;
            outcome.scores = distance_scores(pair_distances(&post, test_pairs, config.metric)?);
            outcome.posteriors = Some(post);
        }
        2 => {
            let attrs = ctx.attributes.expect("checked by knowledge");
            let variant = config
                .variant
                .unwrap_or_else(|| Attack2Variant::default_for(attrs.cols()));
            let ref_cfg = config.seeded(&config.reference_model, "reference");
            outcome.scores = attack2_scores(
                ctx.oracle,
                attrs,
                ctx.labeled,
                test_pairs,
                variant,
                config.metric,
                &ref_cfg,
            )?;
            outcome.variant = Some(variant);
        }
        _ => {
            let train_pairs = ctx.train_pairs.unwrap_or(&[]);
            let view = observe_target(attack, ctx, test_pairs.iter().chain(train_pairs), config)?;
            let trained = match attack.get() {
                3 | 6 => train_supervised_attack(attack, &view, train_pairs, config)?,
                1 | 5 => train_transfer_attack(
                    attack,
                    ctx.shadow.expect("checked by knowledge"),
                    config,
                )?,
                _ => {
                    let shadow_rows = shadow_training_rows(
                        attack,
                        ctx.shadow.expect("checked by knowledge"),
                        config,
                    )?;
                    train_combined_attack(attack, &shadow_rows, &view, train_pairs, config)?
                }
            };
            let test = view.rows(attack, test_pairs)?;
            outcome.scores = trained.scores(&test.table)?;
            outcome.test_features = Some(test.table);
            outcome.trained = Some(trained);
            outcome.posteriors = Some(view.posteriors);
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auc;
    use crate::graph::{split_pairs, Split};
    use crate::models::{train_gcn, TrainConfig};
    use crate::oracle::LocalOracle;
    use crate::toy;
    use proptest::prelude::*;

    fn sse(values: &[f64], labels: &[bool]) -> f64 {
        [true, false]
            .iter()
            .map(|&side| {
                let xs: Vec<f64> = values
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == side)
                    .map(|(&v, _)| v)
                    .collect();
                if xs.is_empty() {
                    return 0.0;
                }
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
            })
            .sum()
    }

    /// Best SSE over every non-trivial subset assignment.
    fn brute_force_sse(values: &[f64]) -> f64 {
        let n = values.len();
        (1..(1u32 << n) - 1)
            .map(|mask| {
                let labels: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
                sse(values, &labels)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn knowledge_maps_bijectively() {
        for id in AttackId::ALL {
            assert_eq!(resolve_attack(id.knowledge()), id);
        }
        let k = |f, a, d| KnowledgeTriplet {
            has_attributes: f,
            has_partial_graph: a,
            has_shadow: d,
        };
        assert_eq!(resolve_attack(k(false, false, false)).get(), 0);
        assert_eq!(resolve_attack(k(true, true, true)).get(), 7);
        assert_eq!(resolve_attack(k(false, true, false)).get(), 3);
        assert_eq!("attack-6".parse::<AttackId>().unwrap().get(), 6);
        assert!("8".parse::<AttackId>().is_err());
    }

    #[test]
    fn kmeans_examples() {
        assert_eq!(
            kmeans_binarize(&[0.1, 0.11, 0.9, 0.92]).unwrap(),
            vec![true, true, false, false]
        );
        assert_eq!(kmeans_binarize(&[0.0, 1.0]).unwrap(), vec![true, false]);
        assert!(matches!(
            kmeans_binarize(&[0.3; 5]),
            Err(AttackError::DegenerateInput)
        ));
    }

    proptest! {
        #[test]
        fn kmeans_matches_exhaustive_search(values in proptest::collection::vec(0u8..20, 2..=12)) {
            let values: Vec<f64> = values.into_iter().map(|v| f64::from(v) / 7.0).collect();
            prop_assume!(values.iter().any(|&v| v != values[0]));
            let labels = kmeans_binarize(&values).unwrap();
            prop_assert!((sse(&values, &labels) - brute_force_sse(&values)).abs() < 1e-9);
            let mean = |side: bool| {
                let xs: Vec<f64> = values.iter().zip(&labels).filter(|(_, &l)| l == side).map(|(&v, _)| v).collect();
                xs.iter().sum::<f64>() / xs.len() as f64
            };
            prop_assert!(mean(true) < mean(false));
        }
    }

    fn toy_oracle() -> (crate::graph::Dataset, LocalOracle) {
        let ds = toy::two_cliques();
        let (m, _) = train_gcn(&ds, &[0, 4], &TrainConfig::target(1)).unwrap();
        let o = LocalOracle::new(&m);
        (ds, o)
    }

    #[test]
    fn attack0_properties() {
        let (ds, o) = toy_oracle();
        let all: Vec<AttackPair> = (0..8)
            .flat_map(|u| (u + 1..8).map(move |v| (u, v)))
            .map(|(u, v)| AttackPair::new(u, v, ds.graph.has_edge(u, v)))
            .collect();
        let s = attack0_scores(&o, &all, Metric::Correlation).unwrap();
        let mean = |linked: bool| {
            let xs: Vec<f64> = all
                .iter()
                .zip(&s.scores)
                .filter(|(p, _)| p.linked == linked)
                .map(|(_, &x)| -x)
                .collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        assert!(mean(true) < mean(false));
        // Same node twice: identical posteriors, maximal score.
        let same = attack0_scores(
            &o,
            &[AttackPair {
                u: 3,
                v: 3,
                linked: true,
                split: Split::Test,
            }],
            Metric::Cosine,
        )
        .unwrap();
        assert_eq!(same.scores, vec![0.0]);
    }

    #[test]
    fn attack2_variants() {
        let (ds, o) = toy_oracle();
        let pairs = build_attack_pairs(&ds.graph, 0).unwrap();
        let ids = [0, 4];
        let labels = [0, 1];
        let labeled = Some(LabeledNodes {
            ids: &ids,
            labels: &labels,
        });
        let cfg = TrainConfig::reference(2);
        let a0 = attack0_scores(&o, pairs.pairs(), Metric::Correlation).unwrap();
        let a2 = attack2_scores(
            &o,
            &ds.attributes,
            labeled,
            pairs.pairs(),
            Attack2Variant::TargetPosteriors,
            Metric::Correlation,
            &cfg,
        )
        .unwrap();
        assert_eq!(a0, a2);
        let attr = attack2_scores(
            &o,
            &ds.attributes,
            None,
            pairs.pairs(),
            Attack2Variant::Attributes,
            Metric::Euclidean,
            &cfg,
        )
        .unwrap();
        for (p, s) in pairs.pairs().iter().zip(&attr.scores) {
            if ds.attributes.row(p.u) == ds.attributes.row(p.v) {
                assert_eq!(*s, 0.0);
            }
        }
        assert!(attack2_scores(
            &o,
            &ds.attributes,
            None,
            pairs.pairs(),
            Attack2Variant::Difference,
            Metric::Euclidean,
            &cfg
        )
        .is_err());
        let d = attack2_scores(
            &o,
            &ds.attributes,
            labeled,
            pairs.pairs(),
            Attack2Variant::Difference,
            Metric::Euclidean,
            &cfg,
        )
        .unwrap();
        assert_eq!(d.scores.len(), pairs.len());
    }

    #[test]
    fn difference_cancels_when_reference_equals_target() {
        // g = f: feed the target posteriors as attributes to an identity-like
        // check by computing the difference directly.
        let (ds, o) = toy_oracle();
        let pairs = build_attack_pairs(&ds.graph, 1).unwrap();
        let post = collect_posteriors(&o, 0..8).unwrap();
        let df = pair_distances(&post, pairs.pairs(), Metric::Correlation).unwrap();
        let diff: Vec<f64> = df.iter().zip(&df).map(|(a, b)| a - b).collect();
        assert!(diff.iter().all(|&x| x == 0.0));
    }

    fn separable_rows(n: usize) -> TrainingRows {
        let mut t = FeatureTable::new(3);
        let mut labels = Vec::new();
        for i in 0..n {
            let linked = i % 2 == 0;
            let d = if linked { 0.0 } else { 1.0 };
            t.push_row(&[d, d * 0.5 + 0.1, 1.0 - d]);
            labels.push(usize::from(linked));
        }
        TrainingRows { table: t, labels }
    }

    #[test]
    fn separable_features_are_learned_and_deterministic() {
        let rows = separable_rows(40);
        let cfg = TrainConfig::attack(3);
        let id = AttackId::new(3).unwrap();
        let a = fit_attack_model(id, &rows, &cfg).unwrap();
        let b = fit_attack_model(id, &rows, &cfg).unwrap();
        assert_eq!(a, b);
        let s = a.scores(&rows.table).unwrap();
        let hits = s
            .labels
            .unwrap()
            .iter()
            .zip(&rows.labels)
            .filter(|(&p, &y)| usize::from(p) == y)
            .count();
        assert_eq!(hits, rows.len());
        let p = a.model.predict_rows(&rows.table).unwrap();
        assert!((0..p.rows()).all(|i| (p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn single_class_rows_are_rejected() {
        let mut rows = separable_rows(4);
        rows.labels = vec![1; 4];
        let err = fit_attack_model(AttackId::new(3).unwrap(), &rows, &TrainConfig::attack(0))
            .unwrap_err();
        assert!(matches!(err, AttackError::Model(ModelError::SingleClass)));
    }

    #[test]
    fn combined_rows_are_a_union() {
        let (ds, o) = toy_oracle();
        let pairs = split_pairs(&build_attack_pairs(&ds.graph, 0).unwrap(), 0.5, 0).unwrap();
        let train = pairs.train();
        let ctx = AttackContext::new(&o);
        let cfg = AttackConfig {
            attack_model: TrainConfig {
                epochs: 5,
                ..TrainConfig::attack(0)
            },
            ..AttackConfig::default()
        };
        let id = AttackId::new(4).unwrap();
        let view = observe_target(id, &ctx, pairs.pairs(), &cfg).unwrap();
        let shadow_cfg = AttackConfig {
            shadow_model: TrainConfig {
                epochs: 10,
                ..TrainConfig::target(0)
            },
            labeled_fraction: 0.25,
            ..cfg.clone()
        };
        let shadow_rows = shadow_training_rows(id, &ds, &shadow_cfg).unwrap();
        let combined = train_combined_attack(id, &shadow_rows, &view, &train, &cfg).unwrap();
        assert_eq!(combined.training_rows, shadow_rows.len() + train.len());

        // Empty shadow contribution: plain supervised training on the transfer schema.
        let empty = TrainingRows::empty(12);
        let only_target = train_combined_attack(id, &empty, &view, &train, &cfg).unwrap();
        let direct = fit_attack_model(
            id,
            &view.rows(id, &train).unwrap(),
            &cfg.seeded(&cfg.attack_model, "attack-model"),
        )
        .unwrap();
        assert_eq!(only_target, direct);
        assert_eq!(only_target.model.input_dim(), 12);
    }

    #[test]
    fn transfer_schema_ignores_shadow_class_count() {
        for classes in [2, 6] {
            let shadow = toy::planted_partition(
                &toy::PlantedConfig {
                    classes,
                    nodes_per_class: 10,
                    ..Default::default()
                },
                3,
            );
            let cfg = AttackConfig {
                shadow_model: TrainConfig {
                    epochs: 5,
                    ..TrainConfig::target(0)
                },
                attack_model: TrainConfig {
                    epochs: 2,
                    ..TrainConfig::attack(0)
                },
                ..AttackConfig::default()
            };
            let t = train_transfer_attack(AttackId::new(1).unwrap(), &shadow, &cfg).unwrap();
            assert_eq!(t.model.input_dim(), 12);
        }
    }

    #[test]
    fn run_attack_checks_knowledge_and_dispatches() {
        let (ds, o) = toy_oracle();
        let pairs = split_pairs(&build_attack_pairs(&ds.graph, 0).unwrap(), 0.5, 0).unwrap();
        let test = pairs.test();
        let ctx = AttackContext::new(&o);
        let cfg = AttackConfig::default();
        let out = run_attack(AttackId::new(0).unwrap().knowledge(), &ctx, &test, &cfg).unwrap();
        assert_eq!(
            out.scores,
            attack0_scores(&o, &test, Metric::Correlation).unwrap()
        );
        assert!(run_attack(AttackId::new(3).unwrap().knowledge(), &ctx, &test, &cfg).is_err());
    }

    #[test]
    fn self_transfer_tracks_attack0_on_two_cliques() {
        let (ds, o) = toy_oracle();
        let pairs = split_pairs(&build_attack_pairs(&ds.graph, 0).unwrap(), 0.5, 0).unwrap();
        let test = pairs.test();
        let truth: Vec<bool> = test.iter().map(|p| p.linked).collect();
        let a0 = attack0_scores(&o, &test, Metric::Correlation).unwrap();
        let ctx = AttackContext {
            shadow: Some(&ds),
            ..AttackContext::new(&o)
        };
        let cfg = AttackConfig {
            labeled_fraction: 0.25,
            ..AttackConfig::default()
        };
        let a1 = run_attack(AttackId::new(1).unwrap().knowledge(), &ctx, &test, &cfg).unwrap();
        let (auc0, auc1) = (
            auc(&a0.scores, &truth).unwrap(),
            auc(&a1.scores.scores, &truth).unwrap(),
        );
        assert!(auc1 >= auc0 - 0.05, "transfer {auc1} vs attack-0 {auc0}");
    }

    #[test]
    fn scores_are_invariant_to_pair_order() {
        let ds = toy::planted_partition(&toy::PlantedConfig::default(), 5);
        let labeled: Vec<usize> = (0..ds.node_count()).step_by(5).collect();
        let (m, _) = train_gcn(&ds, &labeled, &TrainConfig::target(0)).unwrap();
        let o = LocalOracle::new(&m);
        let pairs = split_pairs(&build_attack_pairs(&ds.graph, 0).unwrap(), 0.5, 0).unwrap();
        let (train, test) = (pairs.train(), pairs.test());
        let swapped: Vec<AttackPair> = test.iter().map(|p| p.swapped()).collect();
        let labels = ds.labels_of(&labeled).unwrap();
        let ctx = AttackContext {
            attributes: Some(&ds.attributes),
            labeled: Some(LabeledNodes {
                ids: &labeled,
                labels: &labels,
            }),
            train_pairs: Some(&train),
            ..AttackContext::new(&o)
        };
        let cfg = AttackConfig {
            attack_model: TrainConfig {
                epochs: 5,
                ..TrainConfig::attack(0)
            },
            ..AttackConfig::default()
        };
        let k = AttackId::new(6).unwrap().knowledge();
        let a = run_attack(k, &ctx, &test, &cfg).unwrap();
        let b = run_attack(k, &ctx, &swapped, &cfg).unwrap();
        assert_eq!(a.scores, b.scores);
    }
}
