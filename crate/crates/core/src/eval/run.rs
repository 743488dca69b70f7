use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::trainer::{evaluate_rows, fit, write_log, Dataset, LogRecord, Model, TrainConfig};

use super::report::write_results;
use super::{build_regimes, EvalError, EvalResult, Regime, Report, TaskRef, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixConfig {
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
    pub regimes: Vec<Regime>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            train: TrainConfig::default(),
            regimes: Regime::EVERY.to_vec(),
            variants: vec![Variant::Base, Variant::Adv],
            seeds: vec![0],
        }
    }
}

/// One training run, shared by every cell with the same training set.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrainingJob {
    pub tasks: Vec<TaskRef>,
    pub variant: Variant,
    pub seed: u64,
}

impl TrainingJob {
    /// File-name stem identifying the job.
    pub fn key(&self) -> String {
        let tasks: Vec<String> = self.tasks.iter().map(|t| format!("{}.{}", t.database, t.task)).collect();
        format!("{}-s{}-{}", self.variant, self.seed, tasks.join("+"))
    }

    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig { adversarial: self.variant.adversarial(), seed: self.seed, ..base.clone() }
    }
}

pub struct MatrixOutcome {
    pub results: Vec<EvalResult>,
    pub report: Report,
    /// Training log of each job, keyed by [`TrainingJob::key`].
    pub logs: BTreeMap<String, Vec<LogRecord>>,
}

impl MatrixOutcome {
    pub fn complete(&self) -> bool {
        self.results.iter().all(|r| r.auroc.is_some())
    }
}

fn dataset_tasks(ds: &Dataset) -> Vec<TaskRef> {
    ds.tasks.iter().map(|t| t.id.clone()).collect()
}

/// Distinct training jobs needed by the configured regimes.
pub fn plan_jobs(cfg: &MatrixConfig, ds: &Dataset) -> Result<Vec<TrainingJob>, EvalError> {
    if cfg.regimes.is_empty() {
        return Ok(Vec::new());
    }
    let specs = build_regimes(&dataset_tasks(ds), &cfg.regimes)?;
    let mut jobs: Vec<TrainingJob> = Vec::new();
    for spec in &specs {
        let Some(training) = &spec.training else { continue };
        let mut tasks = training.clone();
        tasks.sort();
        for &seed in &cfg.seeds {
            for &variant in &cfg.variants {
                jobs.push(TrainingJob { tasks: tasks.clone(), variant, seed });
            }
        }
    }
    jobs.sort();
    jobs.dedup();
    Ok(jobs)
}

/// Trains one job and returns the selected model with its log.
pub fn train_job(cfg: &MatrixConfig, ds: &Dataset, job: &TrainingJob) -> Result<(Model, Vec<LogRecord>), EvalError> {
    let idx: Vec<usize> = job
        .tasks
        .iter()
        .map(|t| ds.task_index(t).ok_or_else(|| EvalError::Config(format!("unknown task {t}"))))
        .collect::<Result<_, _>>()?;
    let out = fit(&job.train_config(&cfg.train), &cfg.backbone, ds, &idx)?;
    Ok((out.model, out.log))
}

/// Test-split results for every `(target, regime, variant, seed)` cell,
/// looking models up by job. Cells whose regime is not computable or whose
/// model is absent are kept with a missing marker.
pub fn evaluate_cells<'a>(
    cfg: &MatrixConfig,
    ds: &Dataset,
    model_for: impl Fn(&TrainingJob) -> Option<&'a Model> + Sync,
) -> Result<Vec<EvalResult>, EvalError> {
    if cfg.regimes.is_empty() {
        return Ok(Vec::new());
    }
    let specs = build_regimes(&dataset_tasks(ds), &cfg.regimes)?;
    let mut cells = Vec::new();
    for spec in &specs {
        for &seed in &cfg.seeds {
            for &variant in &cfg.variants {
                cells.push((spec, seed, variant));
            }
        }
    }
    let results = cells
        .par_iter()
        .map(|&(spec, seed, variant)| {
            let Some(training) = &spec.training else {
                return EvalResult::missing(spec.target.clone(), spec.regime, variant, seed, "not computable");
            };
            let mut tasks = training.clone();
            tasks.sort();
            let job = TrainingJob { tasks, variant, seed };
            let Some(model) = model_for(&job) else {
                return EvalResult::missing(spec.target.clone(), spec.regime, variant, seed, "missing checkpoint");
            };
            let ti = ds.task_index(&spec.target).expect("regime targets come from the dataset");
            let rows = &ds.tasks[ti].split.test;
            match evaluate_rows(model, ds, ti, rows, &job.train_config(&cfg.train)) {
                Ok((_, Some(a))) => EvalResult {
                    task: spec.target.clone(),
                    regime: spec.regime,
                    variant,
                    seed,
                    auroc: Some(a),
                    queries: rows.len(),
                    note: None,
                },
                Ok((_, None)) => EvalResult::missing(spec.target.clone(), spec.regime, variant, seed, "single-class test split"),
                Err(e) => EvalResult::missing(spec.target.clone(), spec.regime, variant, seed, format!("failed: {e}")),
            }
        })
        .collect();
    Ok(results)
}

/// Trains every job the regimes need, evaluates every cell and builds the
/// report. With `out_dir`, also writes per-job logs and checkpoints,
/// `results.csv` and the report files.
pub fn run_matrix(cfg: &MatrixConfig, ds: &Dataset, out_dir: Option<&Path>) -> Result<MatrixOutcome, EvalError> {
    if cfg.seeds.is_empty() {
        return Err(EvalError::Config("seed list is empty".into()));
    }
    let jobs = plan_jobs(cfg, ds)?;
    let trained: Vec<(TrainingJob, Result<(Model, Vec<LogRecord>), EvalError>)> =
        jobs.into_par_iter().map(|job| (job.clone(), train_job(cfg, ds, &job))).collect();
    let mut models = BTreeMap::new();
    let mut logs = BTreeMap::new();
    for (job, r) in trained {
        match r {
            Ok((model, log)) => {
                if let Some(dir) = out_dir {
                    std::fs::create_dir_all(dir)?;
                    write_log(&dir.join(format!("{}.log.jsonl", job.key())), &log)?;
                    model.save(&dir.join(format!("{}.ckpt", job.key())), serde_json::to_value(&job).expect("job serializes"))?;
                }
                logs.insert(job.key(), log);
                models.insert(job, model);
            }
            Err(e) => log::error!("training {} failed: {e}", job.key()),
        }
    }
    let results = evaluate_cells(cfg, ds, |job| models.get(job))?;
    let report = Report::from_results(&results);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_results(&dir.join("results.csv"), &results)?;
        report.write(dir, false)?;
    }
    Ok(MatrixOutcome { results, report, logs })
}
