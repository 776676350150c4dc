//! One experiment cell end to end: sample labeled nodes, train the target,
//! build and split the attack pairs, mount an attack through the oracle and
//! score it.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::attacks::{
    run_attack, AttackConfig, AttackContext, AttackId, AttackOutcome, LabeledNodes,
};
use crate::error::Error;
use crate::eval::{
    ablate, auc, baseline_link_prediction, config_hash, distance_bin_analysis, parse_group,
    precision_recall_f1, BinResult, ExperimentResult,
};
use crate::features::{distance, FeatureSchema, Metric};
use crate::graph::{
    build_attack_pairs, sample_labeled_nodes, split_pairs, AttackPair, AttackPairSet, Dataset,
    NodeId,
};
use crate::models::{ModelKind, TargetModel, TrainConfig};
use crate::numerics::Matrix;
use crate::oracle::PosteriorOracle;
use crate::rng::derive_seed;

/// Settings shared by every cell of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub target_kind: ModelKind,
    pub target_model: TrainConfig,
    /// Fraction of nodes whose labels train the target and reference models.
    pub labeled_fraction: f64,
    /// Fraction of attack pairs in the attack-training split.
    pub train_fraction: f64,
    pub attack: AttackConfig,
    pub defense_k: Option<usize>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            target_kind: ModelKind::Gcn,
            target_model: TrainConfig::target(0),
            labeled_fraction: 0.1,
            train_fraction: 0.5,
            attack: AttackConfig::default(),
            defense_k: None,
        }
    }
}

impl ExperimentSpec {
    /// Attack configuration for one seed.
    pub fn attack_config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            seed: derive_seed(seed, "attack"),
            labeled_fraction: self.labeled_fraction,
            ..self.attack.clone()
        }
    }

    pub fn target_config(&self, seed: u64) -> TrainConfig {
        self.target_model
            .clone()
            .with_seed(derive_seed(seed, "target"))
    }
}

/// Seed-dependent inputs of a run that do not involve the target model.
#[derive(Clone, Debug)]
pub struct RunSetup {
    pub seed: u64,
    pub labeled: Vec<NodeId>,
    pub labels: Vec<usize>,
    pub pairs: AttackPairSet,
    pub train_pairs: Vec<AttackPair>,
    pub test_pairs: Vec<AttackPair>,
}

impl RunSetup {
    pub fn new(dataset: &Dataset, spec: &ExperimentSpec, seed: u64) -> Result<Self, Error> {
        let labeled =
            sample_labeled_nodes(dataset, spec.labeled_fraction, derive_seed(seed, "labels"))?;
        let labels = dataset.labels_of(&labeled)?;
        let all = build_attack_pairs(&dataset.graph, derive_seed(seed, "pairs"))?;
        let pairs = split_pairs(&all, spec.train_fraction, derive_seed(seed, "split"))?;
        Ok(Self {
            seed,
            labeled,
            labels,
            train_pairs: pairs.train(),
            test_pairs: pairs.test(),
            pairs,
        })
    }

    /// Trains the target model on this run's labeled nodes.
    pub fn train_target(
        &self,
        dataset: &Dataset,
        spec: &ExperimentSpec,
    ) -> Result<TargetModel, Error> {
        let (model, report) = TargetModel::train(
            spec.target_kind,
            dataset,
            &self.labeled,
            &spec.target_config(self.seed),
        )?;
        log::info!(
            "{} seed {}: target loss {:.4} -> {:.4}",
            dataset.name,
            self.seed,
            report.initial_loss,
            report.final_loss
        );
        Ok(model)
    }

    pub fn test_labels(&self) -> Vec<bool> {
        self.test_pairs.iter().map(|p| p.linked).collect()
    }

    /// Adversary context holding exactly the knowledge of `attack`.
    pub fn context<'a>(
        &'a self,
        attack: AttackId,
        oracle: &'a dyn PosteriorOracle,
        dataset: &'a Dataset,
        shadow: Option<&'a Dataset>,
    ) -> Result<AttackContext<'a>, Error> {
        let k = attack.knowledge();
        if k.has_shadow && shadow.is_none() {
            return Err(Error::Config(format!("{attack} needs a shadow dataset")));
        }
        Ok(AttackContext {
            oracle,
            attributes: k.has_attributes.then_some(&dataset.attributes),
            labeled: k.has_attributes.then_some(LabeledNodes {
                ids: &self.labeled,
                labels: &self.labels,
            }),
            train_pairs: k.has_partial_graph.then_some(self.train_pairs.as_slice()),
            shadow: if k.has_shadow { shadow } else { None },
        })
    }
}

/// Hash of everything that defines a cell except the seed.
pub fn cell_hash(
    spec: &ExperimentSpec,
    kind: &str,
    attack: AttackId,
    dataset: &str,
    shadow: Option<&str>,
    group: Option<&str>,
) -> String {
    let mut s = spec.clone();
    s.target_model.seed = 0;
    s.attack.seed = 0;
    config_hash(&json!({
        "kind": kind,
        "attack": attack.get(),
        "dataset": dataset,
        "shadow": shadow,
        "group": group,
        "spec": s,
    }))
}

fn base_result(
    kind: &str,
    attack: AttackId,
    dataset: &Dataset,
    shadow: Option<&Dataset>,
    spec: &ExperimentSpec,
    seed: u64,
    auc_value: f64,
) -> ExperimentResult {
    let shadow_name = shadow.map(|s| s.name.as_str());
    ExperimentResult {
        kind: kind.into(),
        attack: attack.get(),
        dataset: dataset.name.clone(),
        shadow: shadow_name.map(str::to_string),
        seed,
        auc: auc_value,
        precision: None,
        recall: None,
        f1: None,
        metric: None,
        variant: None,
        defense_k: spec.defense_k,
        group: None,
        runtime_secs: 0.0,
        config_hash: cell_hash(spec, kind, attack, &dataset.name, shadow_name, None),
    }
}

/// Mounts `attack` against `oracle` and scores the test split.
pub fn run_attack_cell(
    setup: &RunSetup,
    oracle: &dyn PosteriorOracle,
    attack: AttackId,
    dataset: &Dataset,
    shadow: Option<&Dataset>,
    spec: &ExperimentSpec,
) -> Result<(ExperimentResult, AttackOutcome), Error> {
    let start = Instant::now();
    let shadow = if attack.knowledge().has_shadow {
        shadow
    } else {
        None
    };
    let ctx = setup.context(attack, oracle, dataset, shadow)?;
    let cfg = spec.attack_config(setup.seed);
    let outcome = run_attack(attack.knowledge(), &ctx, &setup.test_pairs, &cfg)?;
    let truth = setup.test_labels();
    let mut result = base_result(
        "attack",
        attack,
        dataset,
        shadow,
        spec,
        setup.seed,
        auc(&outcome.scores.scores, &truth)?,
    );
    if let Some(pred) = &outcome.scores.labels {
        let prf = precision_recall_f1(pred, &truth)?;
        result.precision = Some(prf.precision);
        result.recall = Some(prf.recall);
        result.f1 = Some(prf.f1);
    }
    if attack.is_unsupervised() {
        result.metric = Some(spec.attack.metric.name().to_string());
    }
    result.variant = outcome.variant.map(|v| v.name().to_string());
    result.runtime_secs = start.elapsed().as_secs_f64();
    Ok((result, outcome))
}

/// Link-prediction baseline on the partial graph of the train split.
pub fn run_baseline_cell(
    setup: &RunSetup,
    dataset: &Dataset,
    spec: &ExperimentSpec,
) -> Result<ExperimentResult, Error> {
    let start = Instant::now();
    let partial = setup.pairs.partial_graph(&dataset.graph)?;
    let cfg = spec
        .attack
        .attack_model
        .clone()
        .with_seed(derive_seed(setup.seed, "baseline"));
    let scores =
        baseline_link_prediction(partial.graph(), &setup.train_pairs, &setup.test_pairs, &cfg)?;
    let truth = setup.test_labels();
    let mut r = base_result(
        "baseline",
        AttackId::new(3).expect("valid id"),
        dataset,
        None,
        spec,
        setup.seed,
        auc(&scores.scores, &truth)?,
    );
    if let Some(pred) = &scores.labels {
        let prf = precision_recall_f1(pred, &truth)?;
        (r.precision, r.recall, r.f1) = (Some(prf.precision), Some(prf.recall), Some(prf.f1));
    }
    r.runtime_secs = start.elapsed().as_secs_f64();
    Ok(r)
}

/// Re-scores a learned attack's test features with only `group` kept.
pub fn ablation_result(
    setup: &RunSetup,
    outcome: &AttackOutcome,
    dataset: &Dataset,
    shadow: Option<&Dataset>,
    spec: &ExperimentSpec,
    group: &str,
) -> Result<ExperimentResult, Error> {
    let (Some(trained), Some(test)) = (&outcome.trained, &outcome.test_features) else {
        return Err(Error::Config(format!(
            "{} has no learned features to ablate",
            outcome.attack
        )));
    };
    let blocks = parse_group(group)?;
    let schema = FeatureSchema::for_attack(
        outcome.attack,
        test_class_count(outcome),
        dataset.attr_dim(),
    )?;
    let scores = ablate(trained, &schema, test, &blocks)?;
    let shadow = if outcome.attack.knowledge().has_shadow {
        shadow
    } else {
        None
    };
    let mut r = base_result(
        "ablation",
        outcome.attack,
        dataset,
        shadow,
        spec,
        setup.seed,
        auc(&scores.scores, &setup.test_labels())?,
    );
    r.group = Some(group.to_string());
    r.config_hash = cell_hash(
        spec,
        "ablation",
        outcome.attack,
        &dataset.name,
        shadow.map(|s| s.name.as_str()),
        Some(group),
    );
    Ok(r)
}

fn test_class_count(outcome: &AttackOutcome) -> usize {
    outcome.posteriors.as_ref().map_or(0, Matrix::cols)
}

/// Distance between the target posteriors of every test pair.
pub fn test_pair_distances(
    setup: &RunSetup,
    posteriors: &Matrix,
    metric: Metric,
) -> Result<Vec<f64>, Error> {
    setup
        .test_pairs
        .iter()
        .map(|p| distance(metric, posteriors.row(p.u), posteriors.row(p.v)).map_err(Error::from))
        .collect()
}

/// Per-bin AUC of `outcome`'s scores, binned by Correlation distance of
/// the target posteriors.
pub fn correlation_bins(
    setup: &RunSetup,
    outcome: &AttackOutcome,
    edges: &[f64],
) -> Result<Vec<BinResult>, Error> {
    let post = outcome
        .posteriors
        .as_ref()
        .ok_or_else(|| Error::Config("attack did not observe target posteriors".into()))?;
    let d = test_pair_distances(setup, post, Metric::Correlation)?;
    Ok(distance_bin_analysis(
        &d,
        &outcome.scores.scores,
        &setup.test_labels(),
        edges,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::LocalOracle;
    use crate::toy;

    fn small_spec() -> ExperimentSpec {
        let mut spec = ExperimentSpec::default();
        spec.attack.attack_model.epochs = 10;
        spec.attack.shadow_model.epochs = 30;
        spec
    }

    #[test]
    fn every_attack_runs_on_planted_partition() {
        let ds = toy::planted_partition(&toy::PlantedConfig::default(), 2);
        let shadow = toy::planted_partition(
            &toy::PlantedConfig {
                classes: 2,
                ..Default::default()
            },
            3,
        );
        let spec = small_spec();
        let setup = RunSetup::new(&ds, &spec, 0).unwrap();
        let target = setup.train_target(&ds, &spec).unwrap();
        let oracle = LocalOracle::new(&target);
        for attack in AttackId::ALL {
            let (r, _) =
                run_attack_cell(&setup, &oracle, attack, &ds, Some(&shadow), &spec).unwrap();
            assert!((0.0..=1.0).contains(&r.auc), "{attack}: {}", r.auc);
            assert_eq!(r.shadow.is_some(), attack.knowledge().has_shadow);
        }
        let b = run_baseline_cell(&setup, &ds, &spec).unwrap();
        assert!((0.0..=1.0).contains(&b.auc));
    }

    #[test]
    fn runs_are_reproducible() {
        let ds = toy::planted_partition(&toy::PlantedConfig::default(), 2);
        let spec = small_spec();
        let run = || {
            let setup = RunSetup::new(&ds, &spec, 4).unwrap();
            let target = setup.train_target(&ds, &spec).unwrap();
            let oracle = LocalOracle::new(&target);
            run_attack_cell(&setup, &oracle, AttackId::new(3).unwrap(), &ds, None, &spec)
                .unwrap()
                .0
        };
        let (mut a, mut b) = (run(), run());
        a.runtime_secs = 0.0;
        b.runtime_secs = 0.0;
        assert_eq!(a, b);
    }

    #[test]
    fn ablation_with_all_groups_matches_full_result() {
        let ds = toy::planted_partition(&toy::PlantedConfig::default(), 2);
        let spec = small_spec();
        let setup = RunSetup::new(&ds, &spec, 1).unwrap();
        let target = setup.train_target(&ds, &spec).unwrap();
        let oracle = LocalOracle::new(&target);
        let (full, outcome) =
            run_attack_cell(&setup, &oracle, AttackId::new(6).unwrap(), &ds, None, &spec).unwrap();
        let all = ablation_result(&setup, &outcome, &ds, None, &spec, "all").unwrap();
        assert_eq!(all.auc, full.auc);
        let none = ablation_result(&setup, &outcome, &ds, None, &spec, "none").unwrap();
        assert_eq!(none.auc, 0.5);
        assert!(ablation_result(&setup, &outcome, &ds, None, &spec, "bogus").is_err());
    }

    #[test]
    fn hash_ignores_seed_but_not_settings() {
        let spec = ExperimentSpec::default();
        let a = AttackId::new(0).unwrap();
        let h = cell_hash(&spec, "attack", a, "x", None, None);
        let mut other = spec.clone();
        other.attack.seed = 99;
        assert_eq!(h, cell_hash(&other, "attack", a, "x", None, None));
        other.defense_k = Some(2);
        assert_ne!(h, cell_hash(&other, "attack", a, "x", None, None));
    }
}
