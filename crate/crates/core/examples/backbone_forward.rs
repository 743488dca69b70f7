//! Featurizes sampled neighborhoods of a synthetic database (row encoder,
//! time features, RWPE) and runs them through the relational backbone.

use kspace::autodiff::{ParamStore, Tape};
use kspace::backbone::{backbone_forward, BackboneConfig, BackboneInput, BackboneParams};
use kspace::features::{rwpe, FeatureConfig};
use kspace::relgraph::sample_neighborhood;
use kspace::synth::{generate, LeakageSpec, SPLIT_FRACTIONS};
use kspace::trainer::Dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (bundle, _) = generate(&LeakageSpec { users: 400, items: 50, interactions: 4000, ..Default::default() })?;
    let features = FeatureConfig { d_enc: 16, rwpe_k: 8, walks: 50, fanout: vec![6, 3], ..Default::default() };
    let ds = Dataset::build(vec![bundle], &features, SPLIT_FRACTIONS)?;
    let task = &ds.tasks[0];
    let db = &ds.databases[task.db];
    println!("task {}: {} labeled rows, feature width {}", task.id, task.nodes.len(), ds.feature_width());

    let (node, at) = task.seed(0);
    let returns = rwpe(&db.graph, node, at, 8, 1000, 0);
    println!("return probabilities of node {node} at {at}: {returns:.3?}");

    let seeds: Vec<_> = task.split.train[..8].iter().map(|&r| task.seed(r)).collect();
    let sub = sample_neighborhood(&db.graph, &seeds, &features.fanout, 1)?;
    let x = db.featurizer.subgraph_features(&db.graph, &sub);
    let table_index: Vec<usize> = sub.global.iter().map(|&n| db.node_table[n]).collect();
    println!("{} seeds, {} sampled nodes, {} sampled edges", seeds.len(), sub.num_nodes(), sub.num_edges());

    let cfg = BackboneConfig { layers: 2, d: 32, ..Default::default() };
    let mut store = ParamStore::new();
    let params = BackboneParams::init(&mut store, "backbone.", &cfg, x.cols(), 0)?;
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape)?;
    let input = BackboneInput {
        features: &x,
        table_index: &table_index,
        layers: &sub.layers,
        reversed: &db.reversed,
        n_out: seeds.len(),
    };
    let (h, _) = backbone_forward(&mut tape, &cfg, &params, &bound, input)?;
    let h = tape.value(h);
    let norms: Vec<f64> = (0..h.rows()).map(|i| h.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    println!("representations {:?}, row norms {norms:.3?}", h.shape());
    Ok(())
}
