//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Criteria 1-7 need the Cora, Citeseer and Pubmed bundles under
//! `$LINKTHEFT_DATA_DIR` (default `<repo>/data`): `cora/`, `citeseer/`,
//! `pubmed/`. Without them those criteria fail with "bundle missing".
//! Criterion 8 runs on synthetic data. Criterion 9 is informational and only
//! runs when an `aids/` bundle is present.
//!
//! Exits non-zero when any gated criterion fails.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;

use linktheft::attacks::{attack0_scores, kmeans_binarize, Attack2Variant, AttackId};
use linktheft::eval::{auc, ExperimentResult};
use linktheft::experiment::{run_attack_cell, ExperimentSpec, RunSetup};
use linktheft::features::{assemble, entropy, FeatureSchema, FeatureSource, Metric};
use linktheft::graph::{load_bundle, Dataset};
use linktheft::models::{
    topk_truncate, GcnModel, MlpModel, ModelKind, NodeClassifier, SageModel, TargetModel,
    TrainConfig,
};
use linktheft::numerics::{gradient_check, Matrix};
use linktheft::oracle::{serve_tcp, LocalOracle, PosteriorOracle, RemoteOracle};
use linktheft::rng::seeded;
use linktheft::toy::{self, PlantedConfig};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

type Check = Result<String, String>;
type Property = (&'static str, fn() -> Check);

fn data_dir() -> PathBuf {
    std::env::var_os("LINKTHEFT_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

/// Trained targets and results shared between criteria.
struct Bench {
    datasets: HashMap<String, Result<Arc<Dataset>, String>>,
    targets: HashMap<String, Arc<Vec<(RunSetup, Matrix)>>>,
    results: HashMap<String, Vec<ExperimentResult>>,
}

impl Bench {
    fn new() -> Self {
        Self {
            datasets: HashMap::new(),
            targets: HashMap::new(),
            results: HashMap::new(),
        }
    }

    fn dataset(&mut self, name: &str) -> Result<Arc<Dataset>, String> {
        self.datasets
            .entry(name.to_string())
            .or_insert_with(|| {
                let dir = data_dir().join(name);
                if !dir.join("edges.txt").is_file() {
                    return Err(format!("bundle missing: {}", dir.display()));
                }
                load_bundle(&dir).map(Arc::new).map_err(|e| e.to_string())
            })
            .clone()
    }

    /// Run setup and undefended target posteriors for every seed.
    fn targets(&mut self, name: &str) -> Result<Arc<Vec<(RunSetup, Matrix)>>, String> {
        if let Some(t) = self.targets.get(name) {
            return Ok(t.clone());
        }
        let ds = self.dataset(name)?;
        let spec = ExperimentSpec::default();
        let trained: Result<Vec<_>, String> = std::thread::scope(|s| {
            let handles: Vec<_> = SEEDS
                .iter()
                .map(|&seed| {
                    let (ds, spec) = (&ds, &spec);
                    s.spawn(move || -> Result<(RunSetup, Matrix), String> {
                        let setup = RunSetup::new(ds, spec, seed).map_err(|e| e.to_string())?;
                        let model = setup.train_target(ds, spec).map_err(|e| e.to_string())?;
                        Ok((setup, model.posteriors()))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        let t = Arc::new(trained?);
        self.targets.insert(name.to_string(), t.clone());
        Ok(t)
    }

    /// One result per seed for `attack` on `target`.
    fn run(
        &mut self,
        target: &str,
        shadow: Option<&str>,
        attack: u8,
        tweak: impl Fn(&mut ExperimentSpec),
        key: &str,
    ) -> Result<Vec<ExperimentResult>, String> {
        let key = format!("{target}|{}|{attack}|{key}", shadow.unwrap_or(""));
        if let Some(r) = self.results.get(&key) {
            return Ok(r.clone());
        }
        let ds = self.dataset(target)?;
        let sh = shadow.map(|s| self.dataset(s)).transpose()?;
        let targets = self.targets(target)?;
        let mut spec = ExperimentSpec::default();
        tweak(&mut spec);
        let attack = AttackId::new(attack).expect("valid attack id");
        let results: Result<Vec<_>, String> = std::thread::scope(|s| {
            let handles: Vec<_> = targets
                .iter()
                .map(|(setup, post)| {
                    let (ds, sh, spec) = (&ds, &sh, &spec);
                    s.spawn(move || -> Result<ExperimentResult, String> {
                        let oracle = LocalOracle::from_posteriors(post.clone())
                            .with_defense(spec.defense_k)
                            .map_err(|e| e.to_string())?;
                        run_attack_cell(setup, &oracle, attack, ds, sh.as_deref(), spec)
                            .map(|(r, _)| r)
                            .map_err(|e| e.to_string())
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        let results = results?;
        self.results.insert(key, results.clone());
        Ok(results)
    }

    fn mean_auc(&mut self, target: &str, shadow: Option<&str>, attack: u8) -> Result<f64, String> {
        Ok(mean(&self.run(target, shadow, attack, |_| {}, "")?, |r| {
            Some(r.auc)
        }))
    }
}

fn mean(rows: &[ExperimentResult], f: impl Fn(&ExperimentResult) -> Option<f64>) -> f64 {
    let v: Vec<f64> = rows.iter().filter_map(f).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn within(name: &str, got: f64, want: f64, tol: f64) -> Result<String, String> {
    let line = format!("{name} {got:.3} (expected {want:.3} ± {tol})");
    if (got - want).abs() <= tol {
        Ok(line)
    } else {
        Err(line)
    }
}

/// Joins several sub-checks: all must pass.
fn all(parts: Vec<Check>) -> Check {
    let ok = parts.iter().all(Result::is_ok);
    let text: Vec<String> = parts.into_iter().map(|p| p.unwrap_or_else(|e| e)).collect();
    if ok {
        Ok(text.join("; "))
    } else {
        Err(text.join("; "))
    }
}

fn with_metric(m: Metric) -> impl Fn(&mut ExperimentSpec) {
    move |s| s.attack.metric = m
}

fn criterion1(b: &mut Bench) -> Check {
    let start = Instant::now();
    let corr = b.run(
        "citeseer",
        None,
        0,
        with_metric(Metric::Correlation),
        "correlation",
    )?;
    let cos = b.run("citeseer", None, 0, with_metric(Metric::Cosine), "cosine")?;
    let elapsed = start.elapsed();
    all(vec![
        within("correlation AUC", mean(&corr, |r| Some(r.auc)), 0.959, 0.03),
        within("cosine AUC", mean(&cos, |r| Some(r.auc)), 0.946, 0.03),
        if elapsed < Duration::from_secs(600) {
            Ok(format!("runtime {:.0}s", elapsed.as_secs_f64()))
        } else {
            Err(format!(
                "runtime {:.0}s exceeds 10 min",
                elapsed.as_secs_f64()
            ))
        },
    ])
}

fn criterion2(b: &mut Bench) -> Check {
    let rows = b.run(
        "citeseer",
        None,
        0,
        with_metric(Metric::Correlation),
        "correlation",
    )?;
    all(vec![
        within("precision", mean(&rows, |r| r.precision), 0.788, 0.05),
        within("recall", mean(&rows, |r| r.recall), 0.991, 0.05),
        within("F1", mean(&rows, |r| r.f1), 0.878, 0.05),
    ])
}

fn table(b: &mut Bench, attack: u8, expected: [(&str, f64); 3], tol: f64) -> Check {
    all(expected
        .into_iter()
        .map(|(ds, want)| within(ds, b.mean_auc(ds, None, attack)?, want, tol))
        .collect())
}

fn criterion5(b: &mut Bench) -> Check {
    all(vec![
        within(
            "shadow cora -> target citeseer",
            b.mean_auc("citeseer", Some("cora"), 1)?,
            0.965,
            0.03,
        ),
        within(
            "shadow citeseer -> target cora",
            b.mean_auc("cora", Some("citeseer"), 1)?,
            0.942,
            0.03,
        ),
    ])
}

fn criterion6(b: &mut Bench) -> Check {
    let plain = b.mean_auc("citeseer", None, 3)?;
    let defended = mean(
        &b.run("citeseer", None, 3, |s| s.defense_k = Some(2), "top2")?,
        |r| Some(r.auc),
    );
    let drop = plain - defended;
    all(vec![
        within("top-2 AUC", defended, 0.958, 0.02),
        if drop < 0.03 {
            Ok(format!("drop {drop:.3}"))
        } else {
            Err(format!("drop {drop:.3} ≥ 0.03"))
        },
        if defended > 0.94 {
            Ok("stays above 0.94".into())
        } else {
            Err(format!("{defended:.3} ≤ 0.94"))
        },
    ])
}

fn criterion7(b: &mut Bench) -> Check {
    let citation = ["citeseer", "cora", "pubmed"];
    let mut parts = Vec::new();
    for ds in citation {
        let a6 = b.mean_auc(ds, None, 6)?;
        let mut best2 = f64::NEG_INFINITY;
        for v in Attack2Variant::ALL {
            let rows = b.run(ds, None, 2, move |s| s.attack.variant = Some(v), v.name())?;
            best2 = best2.max(mean(&rows, |r| Some(r.auc)));
        }
        parts.push(order(
            &format!("{ds}: attack-6 vs best attack-2"),
            a6,
            best2,
        ));

        let a3 = b.mean_auc(ds, None, 3)?;
        let mut best1 = f64::NEG_INFINITY;
        for sh in citation.iter().filter(|&&s| s != ds) {
            best1 = best1.max(b.mean_auc(ds, Some(sh), 1)?);
        }
        parts.push(order(
            &format!("{ds}: attack-3 vs best attack-1"),
            a3,
            best1,
        ));
    }
    all(parts)
}

fn order(name: &str, hi: f64, lo: f64) -> Check {
    let line = format!("{name} {hi:.3} vs {lo:.3}");
    if hi >= lo - 0.01 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion9(b: &mut Bench) -> Check {
    let auc = b.mean_auc("aids", None, 6)?;
    within("AIDS attack-6", auc, 0.979, 0.03)
}

// Property suite.

fn prop_auc_bruteforce() -> Check {
    let mut rng = seeded(11);
    for trial in 0..300 {
        let n = rng.gen_range(2..=200);
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.gen_range(0..10u8)) / 10.0)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let mut wins = 0.0;
        let mut total = 0.0;
        for i in (0..n).filter(|&i| labels[i]) {
            for j in (0..n).filter(|&j| !labels[j]) {
                total += 1.0;
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
        let got = auc(&scores, &labels).map_err(|e| e.to_string())?;
        if (got - wins / total).abs() > 1e-12 {
            return Err(format!(
                "trial {trial}: AUC {got} vs brute force {}",
                wins / total
            ));
        }
    }
    Ok("300 random cases with ties, n ≤ 200".into())
}

fn small_planted(classes: usize, seed: u64) -> Dataset {
    let cfg = PlantedConfig {
        nodes_per_class: 6,
        classes,
        attr_dim: 5,
        p_in: 0.5,
        p_out: 0.05,
        ..PlantedConfig::default()
    };
    toy::planted_partition(&cfg, seed)
}

fn grad_report(name: &str, r: linktheft::numerics::GradCheckReport) -> Check {
    let line = format!(
        "{name} max rel error {:.1e} over {} entries",
        r.max_rel_error, r.entries_checked
    );
    if r.passed() {
        Ok(line)
    } else {
        Err(line)
    }
}

fn prop_gradients() -> Check {
    let ds = small_planted(3, 4);
    let ids: Vec<usize> = (0..ds.node_count()).step_by(2).collect();
    let labels = ds.labels_of(&ids).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::target(5);
    let gcn = GcnModel::init(&ds, &cfg).map_err(|e| e.to_string())?;
    let gcn_check = gradient_check(
        |w| gcn.loss_and_grads(w, &ids, &labels).expect("valid shapes"),
        gcn.weights(),
        1e-4,
    );
    let sage = SageModel::init(&ds, &cfg).map_err(|e| e.to_string())?;
    let sage_check = gradient_check(
        |w| sage.loss_and_grads(w, &ids, &labels).expect("valid shapes"),
        &sage.flat_weights(),
        1e-4,
    );
    let mut parts = vec![
        grad_report("GCN", gcn_check),
        grad_report("GraphSAGE", sage_check),
    ];

    let mut rng = seeded(6);
    let x = Matrix::from_vec(
        24,
        7,
        (0..24 * 7).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("shape");
    let y: Vec<usize> = (0..24).map(|i| i % 3).collect();
    for (name, cfg) in [
        ("reference MLP", TrainConfig::reference(7)),
        ("attack MLP", TrainConfig::attack(8)),
    ] {
        let mlp = MlpModel::init(7, 3, &cfg).map_err(|e| e.to_string())?;
        let r = gradient_check(
            |p| MlpModel::loss_and_grads(p, &x, &y).expect("valid shapes"),
            &mlp.flat_params(),
            1e-4,
        );
        parts.push(grad_report(name, r));
    }
    all(parts)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng, distribution: bool) -> Matrix {
    let mut m = Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .expect("shape");
    if distribution {
        for r in 0..rows {
            let s: f64 = m.row(r).iter().sum();
            m.row_mut(r).iter_mut().for_each(|v| *v /= s);
        }
    }
    m
}

fn prop_swap_symmetry() -> Check {
    let mut rng = seeded(12);
    let mut checked = 0;
    for trial in 0..50 {
        let c = rng.gen_range(2..8);
        let f = random_matrix(6, c, &mut rng, true);
        let g = random_matrix(6, c, &mut rng, true);
        let x = random_matrix(6, 9, &mut rng, false);
        let src = FeatureSource {
            posteriors: &f,
            reference: Some(&g),
            attributes: Some(&x),
        };
        let (u, v) = (rng.gen_range(0..6), rng.gen_range(0..6));
        for attack in AttackId::ALL.into_iter().filter(|a| !a.is_unsupervised()) {
            let a = assemble(attack, u, v, &src).map_err(|e| e.to_string())?;
            let b = assemble(attack, v, u, &src).map_err(|e| e.to_string())?;
            let worst = a
                .values
                .iter()
                .zip(&b.values)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            if worst > 1e-12 {
                return Err(format!(
                    "trial {trial} {attack}: swap changes features by {worst:e}"
                ));
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} feature vectors unchanged under (u, v) -> (v, u)"
    ))
}

fn prop_bounds() -> Check {
    let mut rng = seeded(13);
    for _ in 0..500 {
        let c = rng.gen_range(1..12);
        let p = random_matrix(1, c, &mut rng, true);
        let h = entropy(p.row(0));
        if !(-1e-12..=(c as f64).ln() + 1e-12).contains(&h) {
            return Err(format!("entropy {h} outside [0, ln {c}]"));
        }
        let k = rng.gen_range(1..=c);
        let t = topk_truncate(p.row(0), k);
        let s: f64 = t.iter().sum();
        if (s - 1.0).abs() > 1e-9 || t.iter().filter(|&&v| v > 0.0).count() > k {
            return Err(format!(
                "top-{k} output sums to {s} or keeps too many entries"
            ));
        }
    }
    for kind in [ModelKind::Gcn, ModelKind::Sage] {
        let ds = small_planted(4, 9);
        let ids: Vec<usize> = (0..ds.node_count()).collect();
        let (model, _) = TargetModel::train(kind, &ds, &ids, &TrainConfig::target(1))
            .map_err(|e| e.to_string())?;
        let post = model.posteriors();
        for r in 0..post.rows() {
            let s: f64 = post.row(r).iter().sum();
            if (s - 1.0).abs() > 1e-9 || post.row(r).iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(format!(
                    "{kind:?} posteriors of node {r} are not a distribution"
                ));
            }
        }
    }
    Ok("entropy in [0, ln C]; top-k and model posteriors normalized".into())
}

fn prop_kmeans() -> Check {
    let sse = |values: &[f64], mask: &[bool]| -> f64 {
        [true, false]
            .iter()
            .map(|&side| {
                let xs: Vec<f64> = values
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| m == side)
                    .map(|(&v, _)| v)
                    .collect();
                let mu = xs.iter().sum::<f64>() / xs.len().max(1) as f64;
                xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>()
            })
            .sum()
    };
    let mut rng = seeded(14);
    let mut cases = 0;
    while cases < 400 {
        let n = rng.gen_range(2..=12);
        let values: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.gen_range(0..15u8)) / 7.0)
            .collect();
        if values.iter().all(|&v| v == values[0]) {
            continue;
        }
        let best = (1..(1u32 << n) - 1)
            .map(|m| {
                let mask: Vec<bool> = (0..n).map(|i| m >> i & 1 == 1).collect();
                sse(&values, &mask)
            })
            .fold(f64::INFINITY, f64::min);
        let labels = kmeans_binarize(&values).map_err(|e| e.to_string())?;
        let got = sse(&values, &labels);
        if (got - best).abs() > 1e-9 {
            return Err(format!("{values:?}: SSE {got} vs optimum {best}"));
        }
        let lo = values
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let hi = values
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| !l)
            .map(|(&v, _)| v)
            .fold(f64::INFINITY, f64::min);
        if lo >= hi {
            return Err(format!("{values:?}: linked cluster is not the lower one"));
        }
        cases += 1;
    }
    Ok(format!(
        "{cases} inputs match exhaustive 2-partition search"
    ))
}

fn prop_remote_oracle() -> Check {
    let ds = toy::planted_partition(&PlantedConfig::default(), 21);
    let spec = ExperimentSpec::default();
    let setup = RunSetup::new(&ds, &spec, 0).map_err(|e| e.to_string())?;
    let model = setup.train_target(&ds, &spec).map_err(|e| e.to_string())?;
    let local = Arc::new(LocalOracle::new(&model));
    let server = serve_tcp(local.clone() as Arc<dyn PosteriorOracle>, "127.0.0.1:0")
        .map_err(|e| e.to_string())?;
    let remote = RemoteOracle::connect(server.local_addr()).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for attack in [0u8, 3, 6] {
        let id = AttackId::new(attack).expect("valid id");
        let (l, _) = run_attack_cell(&setup, local.as_ref(), id, &ds, None, &spec)
            .map_err(|e| e.to_string())?;
        let (r, _) =
            run_attack_cell(&setup, &remote, id, &ds, None, &spec).map_err(|e| e.to_string())?;
        let diff = (l.auc - r.auc).abs();
        let line = format!("{id} |ΔAUC| {diff:.1e}");
        parts.push(if diff <= 1e-6 { Ok(line) } else { Err(line) });
    }
    let l = attack0_scores(local.as_ref(), &setup.test_pairs, Metric::Correlation)
        .map_err(|e| e.to_string())?;
    let r = attack0_scores(&remote, &setup.test_pairs, Metric::Correlation)
        .map_err(|e| e.to_string())?;
    parts.push(if l.scores == r.scores {
        Ok("attack-0 scores bit-identical".into())
    } else {
        Err("attack-0 scores differ between remote and local".into())
    });
    drop(remote);
    server.shutdown();
    all(parts)
}

fn prop_transfer_dims() -> Check {
    let mut rng = seeded(15);
    let mut parts = Vec::new();
    for attack in AttackId::ALL
        .into_iter()
        .filter(|a| a.knowledge().has_shadow)
    {
        let mut lens = Vec::new();
        for c in 2..=10 {
            let schema = FeatureSchema::for_attack(attack, c, 7).map_err(|e| e.to_string())?;
            let f = random_matrix(3, c, &mut rng, true);
            let g = random_matrix(3, c, &mut rng, true);
            let x = random_matrix(3, 7, &mut rng, false);
            let src = FeatureSource {
                posteriors: &f,
                reference: Some(&g),
                attributes: Some(&x),
            };
            let v = assemble(attack, 0, 1, &src).map_err(|e| e.to_string())?;
            if v.values.len() != schema.len() {
                return Err(format!(
                    "{attack}: assembled {} values, schema says {}",
                    v.values.len(),
                    schema.len()
                ));
            }
            lens.push(schema.len());
        }
        lens.dedup();
        let line = format!("{attack} dim {:?}", lens);
        parts.push(if lens.len() == 1 { Ok(line) } else { Err(line) });
    }
    all(parts)
}

fn criterion8() -> Check {
    let start = Instant::now();
    let checks: [Property; 7] = [
        ("AUC", prop_auc_bruteforce),
        ("gradients", prop_gradients),
        ("swap symmetry", prop_swap_symmetry),
        ("bounds", prop_bounds),
        ("k-means", prop_kmeans),
        ("remote oracle", prop_remote_oracle),
        ("transfer dims", prop_transfer_dims),
    ];
    let parts = checks
        .iter()
        .map(|(name, f)| {
            f().map(|s| format!("{name}: {s}"))
                .map_err(|e| format!("{name}: {e}"))
        })
        .collect();
    let mut res = all(parts);
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        res = Err(format!(
            "{} (took {secs:.0}s, limit 60s)",
            res.unwrap_or_else(|e| e)
        ));
    }
    res.map(|s| format!("{s} [{secs:.1}s]"))
}

fn main() {
    // `cargo test` passes filter arguments; this harness runs everything.
    let mut bench = Bench::new();
    type Criterion = Box<dyn Fn(&mut Bench) -> Check>;
    let criteria: Vec<(&str, bool, &str, Criterion)> = vec![
        (
            "1",
            true,
            "Attack-0 Citeseer correlation/cosine AUC",
            Box::new(criterion1),
        ),
        (
            "2",
            true,
            "Attack-0 Citeseer k-means precision/recall/F1",
            Box::new(criterion2),
        ),
        (
            "3",
            true,
            "Attack-3 AUC on Citeseer/Cora/Pubmed",
            Box::new(|b| {
                table(
                    b,
                    3,
                    [("citeseer", 0.973), ("cora", 0.954), ("pubmed", 0.947)],
                    0.02,
                )
            }),
        ),
        (
            "4",
            true,
            "Attack-6 AUC on Citeseer/Cora/Pubmed",
            Box::new(|b| {
                table(
                    b,
                    6,
                    [("citeseer", 0.981), ("cora", 0.964), ("pubmed", 0.970)],
                    0.02,
                )
            }),
        ),
        (
            "5",
            true,
            "Attack-1 transfer between Cora and Citeseer",
            Box::new(criterion5),
        ),
        (
            "6",
            true,
            "top-2 defense on Attack-3 Citeseer",
            Box::new(criterion6),
        ),
        (
            "7",
            true,
            "attack ordering on citation datasets",
            Box::new(criterion7),
        ),
        ("8", true, "property suite", Box::new(|_| criterion8())),
        (
            "9",
            false,
            "AIDS Attack-6 (stretch goal, not gated)",
            Box::new(criterion9),
        ),
    ];
    let mut failed = 0;
    for (id, gated, name, check) in criteria {
        let outcome = check(&mut bench);
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) if !gated => ("INFO", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} [{id}] {name}: {detail}");
    }
    println!("acceptance: {failed} gated criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
