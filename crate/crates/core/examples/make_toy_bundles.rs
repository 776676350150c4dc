//! Regenerates the toy dataset bundles under `data/toy/`.
//!
//! Usage: `cargo run -p linktheft --example make_toy_bundles [OUT_DIR]`

use std::path::PathBuf;

use linktheft::graph::Dataset;
use linktheft::toy::{self, PlantedConfig};

fn named(mut ds: Dataset, name: &str) -> Dataset {
    ds.name = name.to_string();
    ds
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy"));
    let planted_b = PlantedConfig {
        nodes_per_class: 15,
        classes: 4,
        attr_dim: 16,
        ..PlantedConfig::default()
    };
    let bundles = [
        named(toy::two_cliques(), "two-cliques"),
        named(toy::path(12), "path"),
        named(toy::star(10), "star"),
        named(
            toy::planted_partition(&PlantedConfig::default(), 1),
            "planted-a",
        ),
        named(toy::planted_partition(&planted_b, 2), "planted-b"),
    ];
    for ds in &bundles {
        let dir = out.join(&ds.name);
        ds.save_bundle(&dir)?;
        println!(
            "{}: {} nodes, {} edges, {} classes",
            dir.display(),
            ds.node_count(),
            ds.graph.edge_count(),
            ds.num_classes
        );
    }
    Ok(())
}
