//! The `kspace` command line: `synth`, `ingest`, `train`, `eval` and
//! `report`, driven by one JSON run config with flags as overrides.

mod config;

pub use config::{RunConfig, StreamSeeds};

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::eval::{
    evaluate_cells, plan_jobs, read_results, train_job, write_results, EvalError, EvalResult, Regime, Report, TrainingJob,
    Variant,
};
use crate::relgraph::{ingest, HeteroGraph, RelationalBundle, SchemaManifest};
use crate::synth::{generate, LeakageSpec};
use crate::trainer::{write_log, Dataset, Model};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_INCOMPLETE: i32 = 3;

pub const THREADS_ENV: &str = "KSPACE_THREADS";
pub const FROZEN_CONFIG: &str = "config.json";
pub const SEEDS_FILE: &str = "seeds.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
    #[error("incomplete results: {0}")]
    Incomplete(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Incomplete(_) => EXIT_INCOMPLETE,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "kspace", version, about = "Relational representation learning with label-leakage suppression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-task database.
    Synth(SynthArgs),
    /// Load and check a database manifest and its tables.
    Ingest(IngestArgs),
    /// Train every job the configured regimes need.
    Train(RunArgs),
    /// Evaluate trained checkpoints and write the report.
    Eval(EvalArgs),
    /// Rebuild report files from a results CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with a generator spec; flags override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub interactions: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub sigma_s: Option<f64>,
    #[arg(long)]
    pub balance: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub manifest: PathBuf,
    /// Write the typed edge list here.
    #[arg(long)]
    pub edges: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replaces the config's manifest list.
    #[arg(long = "manifest")]
    pub manifests: Vec<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Restrict to one variant.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Replaces the config's regime list.
    #[arg(long = "regime")]
    pub regimes: Vec<Regime>,
    /// Replaces the config's seed list.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Directory holding the checkpoints (default: the output directory).
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long)]
    pub emit_plot: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub results: PathBuf,
    /// Output directory (default: next to the results file).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub emit_plot: bool,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match configure_threads().and_then(|_| dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Invalid(format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("thread pool already configured");
    }
    Ok(())
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let mut spec = match &a.spec {
        Some(p) => config::parse_json::<LeakageSpec>(&read(p)?, p)?,
        None => LeakageSpec::default(),
    };
    if let Some(v) = a.users {
        spec.users = v;
    }
    if let Some(v) = a.items {
        spec.items = v;
    }
    if let Some(v) = a.interactions {
        spec.interactions = v;
    }
    if let Some(v) = a.rho {
        spec.rho = v;
    }
    if let Some(v) = a.sigma_s {
        spec.sigma_s = v;
    }
    if let Some(v) = a.balance {
        spec.balance = v;
    }
    if let Some(v) = a.noise {
        spec.noise = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    spec.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    let (bundle, truth) = generate(&spec).map_err(runtime)?;
    crate::synth::write(&a.out, &bundle, &truth).map_err(runtime)?;
    println!("wrote {} users, {} items, {} interactions to {}", spec.users, spec.items, spec.interactions, a.out.display());
    Ok(())
}

fn read(p: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(p).map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))
}

fn load_bundle(path: &Path) -> Result<RelationalBundle, CliError> {
    let (manifest, base) = SchemaManifest::load(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    ingest(&manifest, &base).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<(), CliError> {
    let bundle = load_bundle(&a.manifest)?;
    let graph = HeteroGraph::build(&bundle);
    let m = &bundle.manifest;
    println!("database {}", m.name);
    for (schema, table) in m.tables.iter().zip(&bundle.tables) {
        println!("  table {}: {} rows", schema.name, table.n_rows);
    }
    println!("  {} nodes, {} edges over {} edge types", graph.num_nodes(), graph.num_edges(), graph.num_edge_types());
    for task in &m.tasks {
        let rows = bundle.task_rows(&task.name).map_err(runtime)?;
        let labels: Vec<f64> = rows.labels.iter().flatten().copied().collect();
        let pos = labels.iter().sum::<f64>();
        println!("  task {}: {} labeled rows, {:.1}% positive", task.name, labels.len(), 100.0 * pos / labels.len().max(1) as f64);
    }
    if !bundle.dangling.is_empty() {
        println!("  {} dangling foreign keys dropped", bundle.dangling.len());
    }
    if let Some(p) = &a.edges {
        graph.dump_edge_list(p).map_err(runtime)?;
    }
    Ok(())
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let bundles = cfg.manifests.iter().map(|p| load_bundle(p)).collect::<Result<Vec<_>, _>>()?;
    Dataset::build(bundles, &cfg.features, cfg.split).map_err(runtime)
}

/// Writes the frozen config and the derived stream seeds of a run.
fn freeze(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.output).map_err(runtime)?;
    let mut frozen = cfg.clone();
    for m in frozen.manifests.iter_mut().chain(std::iter::once(&mut frozen.output)) {
        *m = std::fs::canonicalize(&*m).map_err(runtime)?;
    }
    let json = serde_json::to_string_pretty(&frozen).expect("config serializes");
    std::fs::write(cfg.output.join(FROZEN_CONFIG), json + "\n").map_err(runtime)?;
    let seeds: BTreeMap<u64, StreamSeeds> = cfg.seeds.iter().map(|&s| (s, StreamSeeds::derive(s, &cfg.features))).collect();
    let json = serde_json::to_string_pretty(&seeds).expect("seeds serialize");
    std::fs::write(cfg.output.join(SEEDS_FILE), json + "\n").map_err(runtime)
}

pub fn cmd_train(a: &RunArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(a)?;
    let ds = load_dataset(&cfg)?;
    freeze(&cfg)?;
    let matrix = cfg.matrix();
    let jobs = plan_jobs(&matrix, &ds).map_err(runtime)?;
    if jobs.is_empty() {
        return Err(CliError::Invalid("the configured regimes need no training".into()));
    }
    let failures: Vec<String> = jobs
        .par_iter()
        .filter_map(|job| {
            let outcome = train_job(&matrix, &ds, job).and_then(|(model, log)| {
                write_log(&cfg.output.join(format!("{}.log.jsonl", job.key())), &log)?;
                let meta = serde_json::to_value(job).expect("job serializes");
                model.save(&cfg.output.join(format!("{}.ckpt", job.key())), meta)?;
                Ok(())
            });
            match outcome {
                Ok(()) => {
                    log::info!("trained {}", job.key());
                    None
                }
                Err(e) => Some(format!("{}: {e}", job.key())),
            }
        })
        .collect();
    if !failures.is_empty() {
        return Err(CliError::Runtime(format!("training failed for {}", failures.join("; "))));
    }
    println!("trained {} jobs into {}", jobs.len(), cfg.output.display());
    Ok(())
}

fn load_checkpoints(dir: &Path, jobs: &[TrainingJob]) -> BTreeMap<TrainingJob, Model> {
    let mut models = BTreeMap::new();
    for job in jobs {
        let path = dir.join(format!("{}.ckpt", job.key()));
        if !path.exists() {
            log::warn!("missing checkpoint {}", path.display());
            continue;
        }
        match Model::load(&path) {
            Ok((m, _)) => {
                models.insert(job.clone(), m);
            }
            Err(e) => log::error!("{}: {e}", path.display()),
        }
    }
    models
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&a.run)?;
    let ds = load_dataset(&cfg)?;
    let matrix = cfg.matrix();
    let jobs = plan_jobs(&matrix, &ds).map_err(runtime)?;
    let dir = a.checkpoints.clone().unwrap_or_else(|| cfg.output.clone());
    let models = load_checkpoints(&dir, &jobs);
    std::fs::create_dir_all(&cfg.output).map_err(runtime)?;
    let results: Vec<EvalResult> = if models.is_empty() {
        Vec::new()
    } else {
        evaluate_cells(&matrix, &ds, |job| models.get(job)).map_err(runtime)?
    };
    write_results(&cfg.output.join("results.csv"), &results).map_err(runtime)?;
    let report = Report::from_results(&results);
    report.write(&cfg.output, a.emit_plot).map_err(runtime)?;
    print!("{}", report.to_markdown());
    if models.is_empty() {
        return Err(CliError::Incomplete(format!("no checkpoints found in {}", dir.display())));
    }
    let missing = results.iter().filter(|r| r.auroc.is_none()).count();
    if missing > 0 {
        return Err(CliError::Incomplete(format!("{missing} of {} cells missing", results.len())));
    }
    Ok(())
}

pub fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    let results = read_results(&a.results).map_err(|e| {
        let msg = match e {
            EvalError::Config(m) => m,
            other => other.to_string(),
        };
        CliError::Invalid(format!("{}: {msg}", a.results.display()))
    })?;
    let out = match &a.out {
        Some(o) => o.clone(),
        None => a.results.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let report = Report::from_results(&results);
    report.write(&out, a.emit_plot).map_err(runtime)?;
    print!("{}", report.to_markdown());
    let missing = results.iter().filter(|r| r.auroc.is_none()).count();
    if results.is_empty() || missing > 0 {
        return Err(CliError::Incomplete(format!("{missing} of {} cells missing", results.len())));
    }
    Ok(())
}
