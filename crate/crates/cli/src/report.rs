//! `report`: tables and plot-ready CSVs from a results directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use linktheft::eval::{
    aggregate_all, read_jsonl, write_aggregate_csv, AggregateResult, ExperimentResult,
};

use crate::CliError;

const TRANSFER_ATTACKS: [u8; 4] = [1, 4, 5, 7];
const HISTOGRAM_WIDTH: f64 = 0.01;

fn sorted_files(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let entries =
        fs::read_dir(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with(prefix) && n.ends_with(ext))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_results(dir: &Path) -> Result<Vec<ExperimentResult>, CliError> {
    let mut all = Vec::new();
    for path in sorted_files(dir, "results-", ".jsonl")? {
        let file = fs::File::open(&path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let rows = read_jsonl(BufReader::new(file))
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        all.extend(rows);
    }
    if all.is_empty() {
        return Err(CliError::Config(format!("no results in {}", dir.display())));
    }
    Ok(all)
}

/// Rejects results that describe the same cell under different configs.
pub fn check_hashes(results: &[ExperimentResult]) -> Result<(), CliError> {
    let mut seen: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for r in results {
        let key = r.cell_key();
        let identity = key[..key.len() - r.config_hash.len()].to_string();
        seen.entry(identity).or_default().insert(&r.config_hash);
    }
    for (identity, hashes) in seen {
        if hashes.len() > 1 {
            let list: Vec<&str> = hashes.into_iter().collect();
            return Err(CliError::Config(format!(
                "refusing to merge results of {} with mismatched config hashes {}",
                identity.trim_end_matches('|'),
                list.join(", ")
            )));
        }
    }
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Target × shadow grid of mean (or std) AUC for one transfer attack.
/// Rows and columns cover every dataset seen; the diagonal stays blank.
fn grid(rows: &[&AggregateResult], datasets: &[String], std: bool) -> Result<String, CliError> {
    let mut cells: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for a in rows {
        let Some(shadow) = a.shadow.as_deref() else {
            continue;
        };
        let value = if std { a.auc.std } else { a.auc.mean };
        if cells.insert((a.dataset.as_str(), shadow), value).is_some() {
            return Err(CliError::Config(format!(
                "several configurations for attack-{} target {} shadow {}",
                a.attack, a.dataset, shadow
            )));
        }
    }
    let mut out = String::from("target");
    for d in datasets {
        write!(out, ",{d}").expect("string write");
    }
    out.push('\n');
    for t in datasets {
        out.push_str(t);
        for s in datasets {
            let v = if t == s {
                None
            } else {
                cells.get(&(t.as_str(), s.as_str())).copied()
            };
            write!(out, ",{}", fmt(v)).expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

fn bars(rows: &[AggregateResult]) -> String {
    let mut out =
        String::from("dataset,attack,variant,metric,defense_k,auc_mean,auc_std,n_seeds\n");
    for a in rows
        .iter()
        .filter(|a| a.kind == "attack" && a.metric.is_some())
    {
        writeln!(
            out,
            "{},{},{},{},{},{:.4},{:.4},{}",
            a.dataset,
            a.attack,
            a.variant.as_deref().unwrap_or(""),
            a.metric.as_deref().unwrap_or(""),
            a.defense_k.map(|k| k.to_string()).unwrap_or_default(),
            a.auc.mean,
            a.auc.std,
            a.n_seeds
        )
        .expect("string write");
    }
    out
}

/// Histogram of Correlation distances for linked and unlinked test pairs.
fn histogram(distances_csv: &Path) -> Result<String, CliError> {
    let text = fs::read_to_string(distances_csv)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", distances_csv.display())))?;
    let mut counts: BTreeMap<u64, [u64; 2]> = BTreeMap::new();
    let (mut linked_total, mut unlinked_total) = (0u64, 0u64);
    for (i, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || {
            CliError::Config(format!(
                "{} line {}: malformed row",
                distances_csv.display(),
                i + 1
            ))
        };
        if fields.len() != 4 {
            return Err(bad());
        }
        let d: f64 = fields[2].parse().map_err(|_| bad())?;
        let linked = fields[3] == "1";
        let bin = (d.max(0.0) / HISTOGRAM_WIDTH).floor() as u64;
        counts.entry(bin).or_default()[usize::from(linked)] += 1;
        if linked {
            linked_total += 1;
        } else {
            unlinked_total += 1;
        }
    }
    let frac = |c: u64, total: u64| {
        if total == 0 {
            0.0
        } else {
            c as f64 / total as f64
        }
    };
    let mut out = String::from("lower,upper,linked,unlinked,linked_fraction,unlinked_fraction\n");
    if let (Some(&first), Some(&last)) = (counts.keys().next(), counts.keys().next_back()) {
        for bin in first..=last {
            let [unlinked, linked] = counts.get(&bin).copied().unwrap_or_default();
            writeln!(
                out,
                "{:.2},{:.2},{linked},{unlinked},{:.6},{:.6}",
                bin as f64 * HISTOGRAM_WIDTH,
                (bin + 1) as f64 * HISTOGRAM_WIDTH,
                frac(linked, linked_total),
                frac(unlinked, unlinked_total)
            )
            .expect("string write");
        }
    }
    Ok(out)
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Writes the report into `out` and returns the files written.
pub fn cmd_report(dir: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let results = load_results(dir)?;
    check_hashes(&results)?;
    let out = out.unwrap_or(dir);
    fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let rows = aggregate_all(&results)?;
    let mut written = Vec::new();

    let path = out.join("summary.csv");
    let mut buf = Vec::new();
    write_aggregate_csv(&mut buf, &rows).expect("in-memory write");
    write(&path, &String::from_utf8(buf).expect("utf-8"))?;
    written.push(path);

    let datasets: Vec<String> = results
        .iter()
        .flat_map(|r| std::iter::once(r.dataset.clone()).chain(r.shadow.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    for attack in TRANSFER_ATTACKS {
        let cells: Vec<&AggregateResult> = rows
            .iter()
            .filter(|a| a.kind == "attack" && a.attack == attack && a.defense_k.is_none())
            .collect();
        if cells.is_empty() {
            continue;
        }
        for (suffix, std) in [("", false), ("_std", true)] {
            let path = out.join(format!("grid_attack{attack}{suffix}.csv"));
            write(&path, &grid(&cells, &datasets, std)?)?;
            written.push(path);
        }
    }

    if rows.iter().any(|a| a.metric.is_some()) {
        let path = out.join("bars_metric.csv");
        write(&path, &bars(&rows))?;
        written.push(path);
    }

    for src in sorted_files(dir, "distances-", ".csv")? {
        let name = src
            .file_name()
            .and_then(|n| n.to_str())
            .expect("utf-8 name");
        let dataset = &name["distances-".len()..name.len() - ".csv".len()];
        let path = out.join(format!("histogram_{dataset}.csv"));
        write(&path, &histogram(&src)?)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use linktheft::eval::Stat;

    fn result(attack: u8, dataset: &str, shadow: Option<&str>, hash: &str) -> ExperimentResult {
        ExperimentResult {
            kind: "attack".into(),
            attack,
            dataset: dataset.into(),
            shadow: shadow.map(str::to_string),
            seed: 0,
            auc: 0.9,
            precision: None,
            recall: None,
            f1: None,
            metric: None,
            variant: None,
            defense_k: None,
            group: None,
            runtime_secs: 0.0,
            config_hash: hash.into(),
        }
    }

    #[test]
    fn mismatched_hashes_are_refused() {
        let a = result(3, "cora", None, "aaaa");
        let mut b = a.clone();
        b.seed = 1;
        assert!(check_hashes(&[a.clone(), b.clone()]).is_ok());
        b.config_hash = "bbbb".into();
        assert!(matches!(check_hashes(&[a, b]), Err(CliError::Config(_))));
    }

    #[test]
    fn grid_leaves_diagonal_blank() {
        let agg = |t: &str, s: &str, mean: f64| AggregateResult {
            kind: "attack".into(),
            attack: 1,
            dataset: t.into(),
            shadow: Some(s.into()),
            metric: None,
            variant: None,
            defense_k: None,
            group: None,
            config_hash: "h".into(),
            n_seeds: 5,
            single_seed: false,
            auc: Stat { mean, std: 0.01 },
            precision: None,
            recall: None,
            f1: None,
        };
        let rows = [agg("a", "b", 0.9), agg("b", "a", 0.8), agg("a", "a", 0.99)];
        let refs: Vec<&AggregateResult> = rows.iter().collect();
        let g = grid(&refs, &["a".into(), "b".into()], false).unwrap();
        assert_eq!(g, "target,a,b\na,,0.9000\nb,0.8000,\n");
    }

    #[test]
    fn histogram_bins_by_hundredths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("distances-x.csv");
        fs::write(
            &p,
            "dataset,seed,correlation_distance,linked\nx,0,0.005,1\nx,0,0.031,0\nx,0,0.012,1\n",
        )
        .unwrap();
        let h = histogram(&p).unwrap();
        let lines: Vec<&str> = h.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "0.00,0.01,1,0,0.500000,0.000000");
        assert_eq!(lines[3], "0.02,0.03,0,0,0.000000,0.000000");
        assert_eq!(lines[4], "0.03,0.04,0,1,0.000000,1.000000");
    }
}
