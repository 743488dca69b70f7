//! Trains base and adversarial models on task A of a synthetic database and
//! evaluates each on task A (ST) and task B (WD).
//!
//! Usage: `cargo run --release --example leakage_experiment [experiment.json] [out_dir]`

use kspace::synth::LeakageExperiment;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let exp: LeakageExperiment = match args.next() {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => LeakageExperiment { seeds: vec![0], ..Default::default() },
    };
    let out = args.next().map(std::path::PathBuf::from);
    let outcome = exp.run(out.as_deref())?;
    let f = |x: Option<f64>| x.map_or("missing".to_string(), |v| format!("{v:.4}"));
    for s in &outcome.per_seed {
        println!(
            "seed {}: ST(A) base {} adv {}  WD(B) base {} adv {}",
            s.seed,
            f(s.st_base),
            f(s.st_adv),
            f(s.wd_base),
            f(s.wd_adv)
        );
    }
    println!("oracle(B) {:.4}", outcome.oracle_b);
    print!("{}", outcome.report.to_markdown());
    Ok(())
}
