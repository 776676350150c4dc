//! The `train`, `attack`, `baseline`, `ablate` and `serve` subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use linktheft::attacks::AttackId;
use linktheft::eval::{
    aggregate_all, default_bin_edges, write_aggregate_csv, write_jsonl, write_timings,
    ExperimentResult,
};
use linktheft::experiment::{
    ablation_result, correlation_bins, run_attack_cell, run_baseline_cell, test_pair_distances,
    ExperimentSpec, RunSetup,
};
use linktheft::features::Metric;
use linktheft::graph::{load_bundle, Dataset};
use linktheft::models::{Checkpoint, TargetModel};
use linktheft::oracle::{serve_stdio, serve_tcp, LocalOracle, PosteriorOracle, RemoteOracle};

use crate::settings::Settings;
use crate::CliError;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn load(dir: &Path) -> Result<Dataset, CliError> {
    Ok(load_bundle(dir)?)
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("target_seed{seed}.json"))
}

/// Where the target posteriors come from.
enum TargetSource {
    Train,
    Checkpoints(PathBuf),
    Remote(String),
}

impl TargetSource {
    fn from_settings(s: &Settings) -> Result<Self, CliError> {
        match (&s.oracle, &s.checkpoints) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "--oracle and --checkpoints are exclusive".into(),
            )),
            (Some(url), None) => Ok(TargetSource::Remote(url.clone())),
            (None, Some(dir)) => {
                if !dir.is_dir() {
                    return Err(CliError::Config(format!(
                        "checkpoint directory {} not found",
                        dir.display()
                    )));
                }
                Ok(TargetSource::Checkpoints(dir.clone()))
            }
            (None, None) => Ok(TargetSource::Train),
        }
    }

    fn oracle(
        &self,
        ds: &Dataset,
        spec: &ExperimentSpec,
        setup: &RunSetup,
    ) -> Result<Arc<dyn PosteriorOracle>, CliError> {
        let local = |model: TargetModel| -> Result<Arc<dyn PosteriorOracle>, CliError> {
            Ok(Arc::new(
                LocalOracle::new(&model).with_defense(spec.defense_k)?,
            ))
        };
        match self {
            TargetSource::Train => local(setup.train_target(ds, spec)?),
            TargetSource::Checkpoints(dir) => {
                let ckpt = Checkpoint::load(&checkpoint_path(dir, setup.seed))?;
                local(TargetModel::from_checkpoint(&ckpt, ds)?)
            }
            TargetSource::Remote(url) => {
                let remote = RemoteOracle::connect_url(url)?;
                let meta = remote.meta()?;
                if meta.node_count != ds.node_count() {
                    return Err(CliError::Config(format!(
                        "oracle serves {} nodes, dataset has {}",
                        meta.node_count,
                        ds.node_count()
                    )));
                }
                Ok(Arc::new(remote))
            }
        }
    }
}

/// Results of one command, persisted as JSON lines plus an aggregate CSV.
fn persist(out: &Path, stem: &str, results: &[ExperimentResult]) -> Result<(), CliError> {
    ensure_dir(out)?;
    let jsonl = out.join(format!("results-{stem}.jsonl"));
    let mut w = create(&jsonl)?;
    write_jsonl(&mut w, results).map_err(io_err(&jsonl))?;
    w.flush().map_err(io_err(&jsonl))?;

    let timings = out.join(format!("timings-{stem}.jsonl"));
    let mut w = create(&timings)?;
    write_timings(&mut w, results).map_err(io_err(&timings))?;
    w.flush().map_err(io_err(&timings))?;

    let csv = out.join(format!("aggregate-{stem}.csv"));
    let mut w = create(&csv)?;
    write_aggregate_csv(&mut w, &aggregate_all(results)?).map_err(io_err(&csv))?;
    w.flush().map_err(io_err(&csv))?;
    log::info!("wrote {} results to {}", results.len(), jsonl.display());
    Ok(())
}

fn file_stem(ds: &Dataset) -> String {
    ds.name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn cmd_train(s: &Settings) -> Result<(), CliError> {
    let ds = load(s.dataset()?)?;
    let spec = s.spec()?;
    let seeds = s.seed_list()?;
    let out = s.out();
    ensure_dir(&out)?;
    let written: Vec<String> = seeds
        .par_iter()
        .map(|&seed| -> Result<String, CliError> {
            let setup = RunSetup::new(&ds, &spec, seed)?;
            let model = setup.train_target(&ds, &spec)?;
            let path = checkpoint_path(&out, seed);
            model.checkpoint().save(&path)?;
            Ok(path
                .file_name()
                .expect("file name")
                .to_string_lossy()
                .into_owned())
        })
        .collect::<Result<_, _>>()?;
    let manifest = json!({
        "dataset": ds.name,
        "model": spec.target_kind,
        "seeds": seeds,
        "config_hash": linktheft::eval::config_hash(&json!({ "dataset": ds.name, "spec": {
            "target_kind": spec.target_kind,
            "target_model": spec.target_model,
            "labeled_fraction": spec.labeled_fraction,
        }})),
        "checkpoints": written,
    });
    let path = out.join("manifest.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).expect("json") + "\n",
    )
    .map_err(io_err(&path))?;
    println!(
        "trained {} target model(s) into {}",
        seeds.len(),
        out.display()
    );
    Ok(())
}

/// Plot data emitted alongside attack results.
#[derive(Default)]
struct Extras {
    distances: Vec<String>,
    bins: Vec<String>,
}

struct Cell<'a> {
    seed_idx: usize,
    attack: AttackId,
    shadow: Option<&'a Dataset>,
}

pub fn cmd_attack(s: &Settings) -> Result<(), CliError> {
    let ds = load(s.dataset()?)?;
    let shadows: Vec<Dataset> = s
        .shadows()?
        .iter()
        .map(|p| load(p))
        .collect::<Result<_, _>>()?;
    let spec = s.spec()?;
    let seeds = s.seed_list()?;
    let attacks = s.attacks()?;
    let source = TargetSource::from_settings(s)?;
    let explicit = s.attack.as_deref().is_some_and(|a| a.trim() != "all");

    let mut cells = Vec::new();
    for &attack in &attacks {
        if attack.knowledge().has_shadow {
            if shadows.is_empty() {
                if explicit {
                    return Err(CliError::Config(format!("{attack} needs --shadow")));
                }
                log::warn!("skipping {attack}: no shadow dataset");
                continue;
            }
            for sh in &shadows {
                for seed_idx in 0..seeds.len() {
                    cells.push(Cell {
                        seed_idx,
                        attack,
                        shadow: Some(sh),
                    });
                }
            }
        } else {
            for seed_idx in 0..seeds.len() {
                cells.push(Cell {
                    seed_idx,
                    attack,
                    shadow: None,
                });
            }
        }
    }

    let prepared: Vec<(RunSetup, Arc<dyn PosteriorOracle>)> = seeds
        .par_iter()
        .map(|&seed| -> Result<_, CliError> {
            let setup = RunSetup::new(&ds, &spec, seed)?;
            let oracle = source.oracle(&ds, &spec, &setup)?;
            Ok((setup, oracle))
        })
        .collect::<Result<_, _>>()?;

    let outputs: Vec<(ExperimentResult, Extras)> = cells
        .par_iter()
        .map(|cell| -> Result<_, CliError> {
            let (setup, oracle) = &prepared[cell.seed_idx];
            let (result, outcome) =
                run_attack_cell(setup, oracle.as_ref(), cell.attack, &ds, cell.shadow, &spec)?;
            log::info!(
                "{} {} seed {}: AUC {:.4}",
                ds.name,
                cell.attack,
                setup.seed,
                result.auc
            );
            let mut extras = Extras::default();
            if let Some(post) = &outcome.posteriors {
                let shadow = cell.shadow.map_or("", |d| d.name.as_str());
                if cell.attack.get() == 0 {
                    let d = test_pair_distances(setup, post, Metric::Correlation)?;
                    for (dist, p) in d.iter().zip(&setup.test_pairs) {
                        extras.distances.push(format!(
                            "{},{},{dist},{}",
                            ds.name,
                            setup.seed,
                            u8::from(p.linked)
                        ));
                    }
                }
                let max = test_pair_distances(setup, post, Metric::Correlation)?
                    .into_iter()
                    .fold(0.0, f64::max);
                for b in correlation_bins(setup, &outcome, &default_bin_edges(max, 0.01))? {
                    if b.count == 0 {
                        continue;
                    }
                    extras.bins.push(format!(
                        "{},{},{shadow},{},{:.2},{:.2},{},{},{}",
                        ds.name,
                        cell.attack.get(),
                        setup.seed,
                        b.lower,
                        b.upper,
                        b.count,
                        b.positives,
                        b.auc.map(|a| a.to_string()).unwrap_or_default()
                    ));
                }
            }
            Ok((result, extras))
        })
        .collect::<Result<_, _>>()?;

    let out = s.out();
    let stem = format!("attack-{}", file_stem(&ds));
    let results: Vec<ExperimentResult> = outputs.iter().map(|(r, _)| r.clone()).collect();
    persist(&out, &stem, &results)?;

    let dist_path = out.join(format!("distances-{}.csv", file_stem(&ds)));
    let dist_rows: Vec<&String> = outputs.iter().flat_map(|(_, e)| &e.distances).collect();
    if !dist_rows.is_empty() {
        let mut w = create(&dist_path)?;
        writeln!(w, "dataset,seed,correlation_distance,linked").map_err(io_err(&dist_path))?;
        for r in dist_rows {
            writeln!(w, "{r}").map_err(io_err(&dist_path))?;
        }
        w.flush().map_err(io_err(&dist_path))?;
    }
    let bins_path = out.join(format!("bins-{}.csv", file_stem(&ds)));
    let mut w = create(&bins_path)?;
    writeln!(
        w,
        "dataset,attack,shadow,seed,lower,upper,count,positives,auc"
    )
    .map_err(io_err(&bins_path))?;
    for r in outputs.iter().flat_map(|(_, e)| &e.bins) {
        writeln!(w, "{r}").map_err(io_err(&bins_path))?;
    }
    w.flush().map_err(io_err(&bins_path))?;

    print_summary(&results)
}

fn print_summary(results: &[ExperimentResult]) -> Result<(), CliError> {
    for a in aggregate_all(results)? {
        println!(
            "{:<9} attack-{} {:<12} {:<12} AUC {:.3} ± {:.3} (n={})",
            a.kind,
            a.attack,
            a.dataset,
            a.shadow.as_deref().unwrap_or("-"),
            a.auc.mean,
            a.auc.std,
            a.n_seeds
        );
    }
    Ok(())
}

pub fn cmd_baseline(s: &Settings) -> Result<(), CliError> {
    let ds = load(s.dataset()?)?;
    let spec = s.spec()?;
    let results: Vec<ExperimentResult> = s
        .seed_list()?
        .par_iter()
        .map(|&seed| -> Result<_, CliError> {
            let setup = RunSetup::new(&ds, &spec, seed)?;
            Ok(run_baseline_cell(&setup, &ds, &spec)?)
        })
        .collect::<Result<_, _>>()?;
    persist(&s.out(), &format!("baseline-{}", file_stem(&ds)), &results)?;
    print_summary(&results)
}

pub fn cmd_ablate(s: &Settings) -> Result<(), CliError> {
    let ds = load(s.dataset()?)?;
    let shadows: Vec<Dataset> = s
        .shadows()?
        .iter()
        .map(|p| load(p))
        .collect::<Result<_, _>>()?;
    let spec = s.spec()?;
    let attacks = match s.attack {
        Some(_) => s.attacks()?,
        None => vec![AttackId::new(6).expect("valid id")],
    };
    if let Some(a) = attacks.iter().find(|a| a.is_unsupervised()) {
        return Err(CliError::Config(format!(
            "{a} has no learned features to ablate"
        )));
    }
    if attacks.iter().any(|a| a.knowledge().has_shadow) && shadows.is_empty() {
        return Err(CliError::Config("shadow attacks need --shadow".into()));
    }
    let groups = s.groups();
    for g in &groups {
        linktheft::eval::parse_group(g).map_err(|e| CliError::Config(e.to_string()))?;
    }
    let source = TargetSource::from_settings(s)?;
    let seeds = s.seed_list()?;
    let per_seed: Vec<Vec<ExperimentResult>> = seeds
        .par_iter()
        .map(|&seed| -> Result<_, CliError> {
            let setup = RunSetup::new(&ds, &spec, seed)?;
            let oracle = source.oracle(&ds, &spec, &setup)?;
            let mut rows = Vec::new();
            for &attack in &attacks {
                let shadow = shadows.first().filter(|_| attack.knowledge().has_shadow);
                let (_, outcome) =
                    run_attack_cell(&setup, oracle.as_ref(), attack, &ds, shadow, &spec)?;
                for g in &groups {
                    rows.push(ablation_result(&setup, &outcome, &ds, shadow, &spec, g)?);
                }
            }
            Ok(rows)
        })
        .collect::<Result<_, _>>()?;
    let mut results: Vec<ExperimentResult> = per_seed.into_iter().flatten().collect();
    results.sort_by(|a, b| (a.attack, &a.group, a.seed).cmp(&(b.attack, &b.group, b.seed)));
    persist(&s.out(), &format!("ablate-{}", file_stem(&ds)), &results)?;
    print_summary(&results)
}

pub struct ServeOptions {
    pub checkpoint: Option<PathBuf>,
    pub listen: String,
    pub stdio: bool,
    pub query_log: Option<PathBuf>,
}

pub fn cmd_serve(s: &Settings, opts: &ServeOptions) -> Result<(), CliError> {
    let ds = load(s.dataset()?)?;
    let spec = s.spec()?;
    let model = match &opts.checkpoint {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "checkpoint {} not found",
                    path.display()
                )));
            }
            TargetModel::from_checkpoint(&Checkpoint::load(path)?, &ds)?
        }
        None => {
            let seed = s.seed.unwrap_or(0);
            RunSetup::new(&ds, &spec, seed)?.train_target(&ds, &spec)?
        }
    };
    let mut oracle = LocalOracle::new(&model).with_defense(spec.defense_k)?;
    if let Some(log_path) = &opts.query_log {
        oracle = oracle.with_query_log(log_path)?;
    }
    if opts.stdio {
        return serve_stdio(&oracle).map_err(|e| CliError::Runtime(e.to_string()));
    }
    let handle = serve_tcp(Arc::new(oracle), opts.listen.as_str())?;
    println!("listening on tcp://{}", handle.local_addr());
    std::io::stdout().flush().ok();
    handle.wait();
    Ok(())
}
