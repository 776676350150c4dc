//! Layered configuration: command-line flags override a JSON config file,
//! which overrides `LINKTHEFT_*` environment variables.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use linktheft::attacks::{Attack2Variant, AttackId};
use linktheft::experiment::ExperimentSpec;
use linktheft::features::Metric;
use linktheft::models::ModelKind;

use crate::CliError;

/// Options shared by the experiment subcommands. Every field may also come
/// from the config file (same name, snake_case) or from the environment
/// (`LINKTHEFT_` + upper-case name; lists comma-separated).
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Target dataset bundle directory
    #[arg(long)]
    pub dataset: Option<PathBuf>,

    /// Shadow dataset bundle directories (repeatable)
    #[arg(long, value_delimiter = ',')]
    pub shadow: Vec<PathBuf>,

    /// Base seed; alone it selects a single run
    #[arg(long)]
    pub seed: Option<u64>,

    /// Number of seeds (counting up from --seed) or a comma-separated list
    #[arg(long)]
    pub seeds: Option<String>,

    /// Attack ids, comma-separated, or "all"
    #[arg(long)]
    pub attack: Option<String>,

    /// Release only the k largest posteriors
    #[arg(long)]
    pub defense_k: Option<usize>,

    /// Distance metric for Attack-0 and Attack-2
    #[arg(long)]
    pub metric: Option<String>,

    /// Attack-2 quantity: target-posteriors, attributes, difference, reference-posteriors
    #[arg(long)]
    pub variant: Option<String>,

    /// Remote target, e.g. tcp://127.0.0.1:7878
    #[arg(long)]
    pub oracle: Option<String>,

    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Target architecture: gcn or sage
    #[arg(long)]
    pub model: Option<String>,

    /// Shadow target architecture (defaults to --model)
    #[arg(long)]
    pub shadow_model: Option<String>,

    /// Layer count of the shadow target (2 = same as the target)
    #[arg(long)]
    pub shadow_layers: Option<usize>,

    /// Directory of target checkpoints written by `train`
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,

    /// Feature groups for `ablate` (repeatable)
    #[arg(long, value_delimiter = ';')]
    pub group: Vec<String>,

    /// Target and reference training epochs
    #[arg(long)]
    pub target_epochs: Option<usize>,

    /// Attack model training epochs
    #[arg(long)]
    pub attack_epochs: Option<usize>,

    /// Fraction of nodes with known labels
    #[arg(long)]
    pub labeled_fraction: Option<f64>,
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(format!("LINKTHEFT_{}", name.to_ascii_uppercase()))
        .ok()
        .filter(|v| !v.trim().is_empty())
}

fn parse_env<T: std::str::FromStr>(name: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    env_var(name)
        .map(|v| {
            v.trim().parse().map_err(|e| {
                CliError::Config(format!("LINKTHEFT_{}: {e}", name.to_ascii_uppercase()))
            })
        })
        .transpose()
}

fn list_env(name: &str) -> Vec<String> {
    env_var(name)
        .map(|v| {
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
        .unwrap_or_default()
}

impl Settings {
    pub fn from_env() -> Result<Self, CliError> {
        Ok(Self {
            dataset: env_var("dataset").map(PathBuf::from),
            shadow: list_env("shadow").into_iter().map(PathBuf::from).collect(),
            seed: parse_env("seed")?,
            seeds: env_var("seeds"),
            attack: env_var("attack"),
            defense_k: parse_env("defense_k")?,
            metric: env_var("metric"),
            variant: env_var("variant"),
            oracle: env_var("oracle"),
            out: env_var("out").map(PathBuf::from),
            model: env_var("model"),
            shadow_model: env_var("shadow_model"),
            shadow_layers: parse_env("shadow_layers")?,
            checkpoints: env_var("checkpoints").map(PathBuf::from),
            group: env_var("group")
                .map(|v| v.split(';').map(str::to_string).collect())
                .unwrap_or_default(),
            target_epochs: parse_env("target_epochs")?,
            attack_epochs: parse_env("attack_epochs")?,
            labeled_fraction: parse_env("labeled_fraction")?,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `self` win; the rest come from `lower`.
    pub fn over(self, lower: Settings) -> Settings {
        fn vec_or<T>(a: Vec<T>, b: Vec<T>) -> Vec<T> {
            if a.is_empty() {
                b
            } else {
                a
            }
        }
        Settings {
            dataset: self.dataset.or(lower.dataset),
            shadow: vec_or(self.shadow, lower.shadow),
            seed: self.seed.or(lower.seed),
            seeds: self.seeds.or(lower.seeds),
            attack: self.attack.or(lower.attack),
            defense_k: self.defense_k.or(lower.defense_k),
            metric: self.metric.or(lower.metric),
            variant: self.variant.or(lower.variant),
            oracle: self.oracle.or(lower.oracle),
            out: self.out.or(lower.out),
            model: self.model.or(lower.model),
            shadow_model: self.shadow_model.or(lower.shadow_model),
            shadow_layers: self.shadow_layers.or(lower.shadow_layers),
            checkpoints: self.checkpoints.or(lower.checkpoints),
            group: vec_or(self.group, lower.group),
            target_epochs: self.target_epochs.or(lower.target_epochs),
            attack_epochs: self.attack_epochs.or(lower.attack_epochs),
            labeled_fraction: self.labeled_fraction.or(lower.labeled_fraction),
        }
    }

    /// Flags over `config` file over environment.
    pub fn layered(flags: Settings, config: Option<&Path>) -> Result<Settings, CliError> {
        let file = config
            .map(Settings::from_file)
            .transpose()?
            .unwrap_or_default();
        Ok(flags.over(file).over(Settings::from_env()?))
    }

    pub fn dataset(&self) -> Result<&Path, CliError> {
        let p = self
            .dataset
            .as_deref()
            .ok_or_else(|| CliError::Config("no dataset given (--dataset)".into()))?;
        require_bundle(p)?;
        Ok(p)
    }

    pub fn shadows(&self) -> Result<&[PathBuf], CliError> {
        for p in &self.shadow {
            require_bundle(p)?;
        }
        Ok(&self.shadow)
    }

    pub fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("results"))
    }

    /// Distinct seeds; defaults to five counting up from `--seed` (or 0).
    pub fn seed_list(&self) -> Result<Vec<u64>, CliError> {
        let base = self.seed.unwrap_or(0);
        let seeds: Vec<u64> = match (&self.seeds, self.seed) {
            (Some(s), _) if s.contains(',') => s
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|e| CliError::Config(format!("seed {x:?}: {e}")))
                })
                .collect::<Result<_, _>>()?,
            (Some(s), _) => {
                let n: u64 = s
                    .trim()
                    .parse()
                    .map_err(|e| CliError::Config(format!("--seeds {s:?}: {e}")))?;
                (base..base + n).collect()
            }
            (None, Some(seed)) => vec![seed],
            (None, None) => (0..5).collect(),
        };
        if seeds.is_empty() {
            return Err(CliError::Config("no seeds selected".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(CliError::Config("seeds must be distinct".into()));
        }
        Ok(seeds)
    }

    pub fn attacks(&self) -> Result<Vec<AttackId>, CliError> {
        match self.attack.as_deref().map(str::trim) {
            None | Some("all") => Ok(AttackId::ALL.to_vec()),
            Some(list) => {
                let mut ids: Vec<AttackId> = list
                    .split(',')
                    .map(|s| s.parse().map_err(CliError::Config))
                    .collect::<Result<_, _>>()?;
                ids.sort();
                ids.dedup();
                Ok(ids)
            }
        }
    }

    pub fn groups(&self) -> Vec<String> {
        if self.group.is_empty() {
            ["all", "posterior", "reference", "attribute", "none"]
                .map(str::to_string)
                .to_vec()
        } else {
            self.group.clone()
        }
    }

    /// Experiment settings: library defaults plus any overrides.
    pub fn spec(&self) -> Result<ExperimentSpec, CliError> {
        let mut spec = ExperimentSpec::default();
        if let Some(m) = &self.model {
            spec.target_kind = parse_kind(m)?;
        }
        spec.attack.shadow_kind = match &self.shadow_model {
            Some(m) => parse_kind(m)?,
            None => spec.target_kind,
        };
        if let Some(layers) = self.shadow_layers {
            if layers < 2 {
                return Err(CliError::Config(
                    "--shadow-layers must be at least 2".into(),
                ));
            }
            let width = spec.target_model.hidden_dims[0];
            spec.attack.shadow_model.hidden_dims = vec![width; layers - 1];
        }
        if let Some(m) = &self.metric {
            spec.attack.metric = m.parse::<Metric>().map_err(CliError::Config)?;
        }
        if let Some(v) = &self.variant {
            spec.attack.variant = Some(v.parse::<Attack2Variant>().map_err(CliError::Config)?);
        }
        if let Some(e) = self.target_epochs {
            spec.target_model.epochs = e;
            spec.attack.shadow_model.epochs = e;
            spec.attack.reference_model.epochs = e;
        }
        if let Some(e) = self.attack_epochs {
            spec.attack.attack_model.epochs = e;
        }
        if let Some(f) = self.labeled_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(CliError::Config(format!(
                    "labeled fraction {f} outside (0, 1]"
                )));
            }
            spec.labeled_fraction = f;
        }
        if self.defense_k == Some(0) {
            return Err(CliError::Config("--defense-k must be at least 1".into()));
        }
        spec.defense_k = self.defense_k;
        Ok(spec)
    }
}

fn parse_kind(s: &str) -> Result<ModelKind, CliError> {
    match s.parse::<ModelKind>().map_err(CliError::Config)? {
        ModelKind::Mlp => Err(CliError::Config("target model must be gcn or sage".into())),
        k => Ok(k),
    }
}

/// A bundle must contain all four files before any work starts.
pub fn require_bundle(dir: &Path) -> Result<(), CliError> {
    for f in linktheft::graph::bundle_paths(dir) {
        if !f.is_file() {
            return Err(CliError::Config(format!("missing {}", f.display())));
        }
    }
    Ok(())
}
