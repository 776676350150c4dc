//! Error types, one enum per subsystem plus a crate-level umbrella.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot sample {needed} negative pairs, only {available} non-adjacent pairs exist")]
    SamplingInfeasible { needed: usize, available: usize },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("unknown node {node} (model covers {node_count} nodes)")]
    UnknownNode { node: usize, node_count: usize },
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("vectors differ in length: {0} vs {1}")]
    Shape(usize, usize),
    #[error("attack {attack} needs {missing}, which the adversary does not hold")]
    MissingKnowledge { attack: u8, missing: &'static str },
    #[error("attack {0} uses no learned features")]
    Unsupervised(u8),
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle rejected the request: {0}")]
    Rejected(String),
    #[error("transport error: {0}")]
    Transport(#[from] std::io::Error),
    #[error("malformed oracle response: {0}")]
    Protocol(String),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("cannot aggregate results: {0}")]
    Aggregation(String),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("k-means needs at least two distinct distances")]
    DegenerateInput,
    #[error("attack {attack}: {message}")]
    Knowledge { attack: u8, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Umbrella error for the experiment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors caused by bad input or configuration rather than a
    /// failure during computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Graph(GraphError::Config(_))
                | Error::Graph(GraphError::Parse { .. })
                | Error::Graph(GraphError::Integrity(_))
                | Error::Graph(GraphError::Io { .. })
                | Error::Model(ModelError::Config(_))
                | Error::Attack(AttackError::Config(_))
                | Error::Attack(AttackError::Knowledge { .. })
                | Error::Eval(EvalError::Aggregation(_))
                | Error::Eval(EvalError::Config(_))
        )
    }
}
