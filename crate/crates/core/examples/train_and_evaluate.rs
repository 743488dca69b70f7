//! Trains base and adversarial models for the ST and WD regimes on a small
//! synthetic database and prints the report.
//!
//! Usage: `cargo run --release --example train_and_evaluate [out_dir]`

use kspace::backbone::BackboneConfig;
use kspace::eval::{run_matrix, MatrixConfig, Regime, Variant};
use kspace::features::FeatureConfig;
use kspace::synth::{generate, LeakageSpec, SPLIT_FRACTIONS};
use kspace::trainer::{Dataset, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let (bundle, _) = generate(&LeakageSpec { users: 1000, items: 100, interactions: 10_000, ..Default::default() })?;
    let features = FeatureConfig { d_enc: 16, rwpe_k: 8, walks: 20, fanout: vec![8, 4], ..Default::default() };
    let ds = Dataset::build(vec![bundle], &features, SPLIT_FRACTIONS)?;
    let cfg = MatrixConfig {
        backbone: BackboneConfig { layers: 2, d: 32, ..Default::default() },
        train: TrainConfig { epochs: 3, steps_per_epoch: 20, n_support: 32, n_query: 32, ..Default::default() },
        regimes: vec![Regime::St, Regime::Wd],
        variants: vec![Variant::Base, Variant::Adv],
        seeds: vec![0],
    };
    let outcome = run_matrix(&cfg, &ds, out.as_deref())?;
    for (key, log) in &outcome.logs {
        println!("{key}: {} log records", log.len());
    }
    print!("{}", outcome.report.to_markdown());
    if !outcome.complete() {
        println!("some cells are missing");
    }
    Ok(())
}
