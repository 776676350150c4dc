//! `linktheft` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod report;
mod run;
mod settings;

use settings::Settings;

#[derive(Debug)]
pub enum CliError {
    /// Bad input: flags, config, missing or malformed files. Exit code 2.
    Config(String),
    /// Failure while running. Exit code 3.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<linktheft::Error> for CliError {
    fn from(e: linktheft::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                linktheft::Error::from(e).into()
            }
        }
    )*};
}

from_core!(
    linktheft::error::GraphError,
    linktheft::error::ModelError,
    linktheft::error::OracleError,
    linktheft::error::EvalError,
    linktheft::error::AttackError
);

#[derive(Parser)]
#[command(
    name = "linktheft",
    version,
    about = "Link-stealing attacks against graph neural networks"
)]
struct Cli {
    /// JSON config file; flags override it, it overrides LINKTHEFT_* variables
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output (repeatable)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train target models and write checkpoints
    Train(Settings),
    /// Run attacks against a trained or remote target
    Attack(Settings),
    /// Serve target posteriors over TCP or stdio
    Serve {
        #[command(flatten)]
        settings: Settings,
        /// Checkpoint to serve; without it a target is trained from --seed
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Answer requests on stdin/stdout instead of TCP
        #[arg(long)]
        stdio: bool,
        /// Append every answered query to this file
        #[arg(long)]
        query_log: Option<PathBuf>,
    },
    /// Summary tables and plot CSVs from a results directory
    Report {
        dir: PathBuf,
        /// Output directory (defaults to the results directory)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Link-prediction baseline on the partial graph
    Baseline(Settings),
    /// Feature-group ablation of learned attacks
    Ablate(Settings),
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Train(s) => run::cmd_train(&Settings::layered(s, config)?),
        Command::Attack(s) => run::cmd_attack(&Settings::layered(s, config)?),
        Command::Baseline(s) => run::cmd_baseline(&Settings::layered(s, config)?),
        Command::Ablate(s) => run::cmd_ablate(&Settings::layered(s, config)?),
        Command::Serve {
            settings,
            checkpoint,
            listen,
            stdio,
            query_log,
        } => run::cmd_serve(
            &Settings::layered(settings, config)?,
            &run::ServeOptions {
                checkpoint,
                listen,
                stdio,
                query_log,
            },
        ),
        Command::Report { dir, out } => {
            if !dir.is_dir() {
                return Err(CliError::Config(format!(
                    "no results: {} is not a directory",
                    dir.display()
                )));
            }
            for path in report::cmd_report(&dir, out.as_deref())? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("linktheft: {e}");
            ExitCode::from(match e {
                CliError::Config(_) => 2,
                CliError::Runtime(_) => 3,
            })
        }
    }
}
