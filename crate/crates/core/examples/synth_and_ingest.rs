//! Writes a small synthetic database, ingests it back through its manifest
//! and samples a temporal neighborhood around a few users.
//!
//! Usage: `cargo run --example synth_and_ingest [out_dir]`

use std::path::PathBuf;

use kspace::relgraph::{ingest, sample_neighborhood, HeteroGraph, SchemaManifest};
use kspace::synth::{generate, write, LeakageSpec, TASK_A};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("kspace-synth"));
    let spec = LeakageSpec { users: 300, items: 40, interactions: 3000, seed: 1, ..Default::default() };
    let (bundle, truth) = generate(&spec)?;
    write(&out, &bundle, &truth)?;
    println!("wrote {}", out.display());

    let (manifest, base) = SchemaManifest::load(&out.join("manifest.json"))?;
    let back = ingest(&manifest, &base)?;
    for t in &back.tables {
        println!("table {}: {} rows", t.name, t.n_rows);
    }
    let g = HeteroGraph::build(&back);
    println!("{} nodes, {} edges, {} edge types", g.num_nodes(), g.num_edges(), g.num_edge_types());

    let rows = back.task_rows(TASK_A)?;
    let seeds: Vec<_> = (0..3).map(|r| (g.table_nodes(0).start + r, rows.times[r].unwrap_or(i64::MAX))).collect();
    let sub = sample_neighborhood(&g, &seeds, &[8, 4], 7)?;
    for (i, &(node, at)) in seeds.iter().enumerate() {
        let size = sub.seed_of.iter().filter(|&&s| s == i).count();
        println!("user node {node} at {at}: {size} sampled nodes");
    }
    Ok(())
}
