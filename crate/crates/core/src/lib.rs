//! Link-stealing attacks against graph neural networks.
//!
//! A target GCN (or GraphSAGE) is trained on a node-classification graph
//! and exposed only through a posterior oracle. Eight attacks, selected by
//! what the adversary knows about node attributes, a partial graph and a
//! shadow dataset, try to infer which node pairs are linked.

pub mod attacks;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod graph;
pub mod models;
pub mod numerics;
pub mod oracle;
pub mod rng;
pub mod toy;

pub use error::Error;
