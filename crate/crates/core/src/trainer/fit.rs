use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::eval::auroc;
use crate::relgraph::seeds;

use super::data::{sample_episode, Dataset, TaskData};
use super::model::{train_step, Model, StepMetrics};
use super::optim::AdamW;
use super::{TrainConfig, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step { epoch: usize, step: usize, task: String, metrics: StepMetrics },
    Epoch { epoch: usize, val_auroc: Option<f64>, selected: bool },
}

pub struct FitOutcome {
    /// Parameters of the epoch with the best mean validation AUROC, or the
    /// initialization when no epoch ran.
    pub model: Model,
    pub log: Vec<LogRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_auroc: Option<f64>,
}

/// Trains on `tasks` with episodes interleaved round-robin, keeping the
/// checkpoint with the best mean validation AUROC over those tasks.
pub fn fit(cfg: &TrainConfig, backbone: &BackboneConfig, ds: &Dataset, tasks: &[usize]) -> Result<FitOutcome, TrainError> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(TrainError::Config("no training tasks".into()));
    }
    let mut model = Model::init(backbone, ds.feature_width(), seeds::named(cfg.seed, "init"))?;
    let mut opt = AdamW::new(cfg.optimizer.clone());
    let episodes = seeds::named(cfg.seed, "episodes");
    let sampling = seeds::named(cfg.seed, "sampling");
    let mut log = Vec::new();
    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_score: Option<f64> = None;
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        for _ in 0..cfg.steps_per_epoch {
            let ti = tasks[step % tasks.len()];
            let task = &ds.tasks[ti];
            let mut rng = seeds::stream(episodes, step as u64);
            let ep = sample_episode(ti, task, &task.split.train, cfg.n_support, cfg.n_query, &mut rng)?;
            let metrics = train_step(&mut model, &mut opt, ds, &ep, cfg, seeds::derive_seed(sampling, step as u64))?;
            log::debug!("epoch {epoch} step {step} {}: loss {:.4}", task.id, metrics.main_loss);
            log.push(LogRecord::Step { epoch, step, task: task.id.to_string(), metrics });
            step += 1;
        }
        let mut scores = Vec::new();
        for &ti in tasks {
            if let (_, Some(a)) = evaluate_rows(&model, ds, ti, &ds.tasks[ti].split.val, cfg)? {
                scores.push(a);
            }
        }
        let val = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
        let selected = match (best_epoch, best_score, val) {
            (None, _, _) => true,
            (_, None, _) => true,
            (_, Some(b), Some(v)) => v > b,
            (_, Some(_), None) => false,
        };
        if selected {
            best = model.clone();
            best_epoch = Some(epoch);
            best_score = val;
        }
        log::info!("epoch {epoch}: validation AUROC {val:?}{}", if selected { " (kept)" } else { "" });
        log.push(LogRecord::Epoch { epoch, val_auroc: val, selected });
    }
    Ok(FitOutcome { model: best, log, best_epoch, best_val_auroc: best_score })
}

/// At most `max` rows of the task's train split holding both classes,
/// chosen with a stream derived from `seed`.
pub fn support_rows(task: &TaskData, max: usize, seed: u64) -> Result<Vec<usize>, TrainError> {
    let pool = &task.split.train;
    if pool.len() <= max {
        let rows = pool.clone();
        let ys = task.labels_of(&rows);
        if !ys.contains(&0.0) || !ys.contains(&1.0) {
            return Err(TrainError::Data(format!("{}: training rows hold a single class", task.id)));
        }
        return Ok(rows);
    }
    let mut rng = seeds::stream(seed, 0);
    Ok(sample_episode(0, task, pool, max, 0, &mut rng)?.support)
}

/// ICL probabilities for `query` rows of a task, with support drawn from
/// its train split, and their AUROC (`None` for single-class queries).
pub fn evaluate_rows(
    model: &Model,
    ds: &Dataset,
    task: usize,
    query: &[usize],
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, Option<f64>), TrainError> {
    let t = &ds.tasks[task];
    let db = &ds.databases[t.db];
    if query.is_empty() {
        return Ok((Vec::new(), None));
    }
    let support = support_rows(t, cfg.eval_support, seeds::named(cfg.seed, "eval-support"))?;
    let sample_seed = seeds::named(cfg.seed, "eval-sampling");
    let fanout = &db.featurizer.config.fanout;
    let seeds_of = |rows: &[usize]| rows.iter().map(|&r| t.seed(r)).collect::<Vec<_>>();
    let hs = model.represent(db, &seeds_of(&support), fanout, sample_seed, cfg.eval_batch)?;
    let hq = model.represent(db, &seeds_of(query), fanout, sample_seed, cfg.eval_batch)?;
    let probs = model.icl.predict_values(&hq, &hs, &t.labels_of(&support))?;
    let a = auroc(&probs, &t.labels_of(query));
    Ok((probs, a))
}

pub fn write_log(path: &Path, log: &[LogRecord]) -> Result<(), TrainError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in log {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, TrainError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| TrainError::Data(format!("{}: {e}", path.display()))))
        .collect()
}
