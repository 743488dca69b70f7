use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::eval::{
    evaluate_cells, train_job, write_results, EvalError, EvalResult, MatrixConfig, Regime, Report, TaskRef, TrainingJob,
    Variant,
};
use crate::features::FeatureConfig;
use crate::trainer::{write_log, Dataset, LogRecord, TrainConfig};

use super::{generate, oracle_auroc, LeakageSpec, SynthError, SPLIT_FRACTIONS, TASK_A, TASK_B};

/// Base and adversarial models trained on task A of one generated database,
/// scored on task A (ST) and task B (WD) for each training seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakageExperiment {
    pub spec: LeakageSpec,
    pub features: FeatureConfig,
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

impl Default for LeakageExperiment {
    /// A reduced model that trains in about a minute per run on one core.
    fn default() -> Self {
        Self {
            spec: LeakageSpec::default(),
            features: FeatureConfig { d_enc: 32, rwpe_k: 8, walks: 20, fanout: vec![10, 5], ..Default::default() },
            backbone: BackboneConfig { d: 64, layers: 2, ..Default::default() },
            train: TrainConfig::default(),
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedScores {
    pub seed: u64,
    pub st_base: Option<f64>,
    pub st_adv: Option<f64>,
    pub wd_base: Option<f64>,
    pub wd_adv: Option<f64>,
}

pub struct LeakageOutcome {
    pub oracle_b: f64,
    pub per_seed: Vec<SeedScores>,
    pub results: Vec<EvalResult>,
    pub report: Report,
    /// Training log per job key.
    pub logs: BTreeMap<String, Vec<LogRecord>>,
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<Option<f64>> = xs.collect();
    if v.is_empty() || v.iter().any(|x| x.is_none()) {
        return None;
    }
    Some(v.iter().flatten().sum::<f64>() / v.len() as f64)
}

impl LeakageOutcome {
    pub fn st_base(&self) -> Option<f64> {
        mean(self.per_seed.iter().map(|s| s.st_base))
    }

    pub fn st_adv(&self) -> Option<f64> {
        mean(self.per_seed.iter().map(|s| s.st_adv))
    }

    pub fn wd_base(&self) -> Option<f64> {
        mean(self.per_seed.iter().map(|s| s.wd_base))
    }

    pub fn wd_adv(&self) -> Option<f64> {
        mean(self.per_seed.iter().map(|s| s.wd_adv))
    }
}

impl LeakageExperiment {
    /// Generates the database, trains both variants on task A for every
    /// seed and evaluates ST(A) and WD(B). With `out_dir`, writes logs,
    /// checkpoints, `results.csv` and the report there.
    pub fn run(&self, out_dir: Option<&Path>) -> Result<LeakageOutcome, SynthError> {
        if self.seeds.is_empty() {
            return Err(SynthError::Spec("seed list is empty".into()));
        }
        let (bundle, truth) = generate(&self.spec)?;
        let oracle_b = oracle_auroc(&bundle, &truth, TASK_B)?
            .ok_or_else(|| SynthError::Spec("task B test split holds a single class".into()))?;
        let db = bundle.manifest.name.clone();
        let ds = Dataset::build(vec![bundle], &self.features, SPLIT_FRACTIONS).map_err(EvalError::from)?;
        let matrix = MatrixConfig {
            backbone: self.backbone.clone(),
            train: self.train.clone(),
            regimes: vec![Regime::St, Regime::Wd],
            variants: vec![Variant::Base, Variant::Adv],
            seeds: self.seeds.clone(),
        };
        let task_a = TaskRef::new(&db, TASK_A);
        let task_b = TaskRef::new(&db, TASK_B);
        let mut models = BTreeMap::new();
        let mut logs = BTreeMap::new();
        for &seed in &self.seeds {
            for variant in [Variant::Base, Variant::Adv] {
                let job = TrainingJob { tasks: vec![task_a.clone()], variant, seed };
                log::info!("training {}", job.key());
                let (model, log) = train_job(&matrix, &ds, &job)?;
                if let Some(dir) = out_dir {
                    std::fs::create_dir_all(dir)?;
                    write_log(&dir.join(format!("{}.log.jsonl", job.key())), &log).map_err(EvalError::from)?;
                    model
                        .save(&dir.join(format!("{}.ckpt", job.key())), serde_json::to_value(&job)?)
                        .map_err(EvalError::from)?;
                }
                logs.insert(job.key(), log);
                models.insert(job, model);
            }
        }
        let results: Vec<EvalResult> = evaluate_cells(&matrix, &ds, |job| models.get(job))?
            .into_iter()
            .filter(|r| (r.regime == Regime::St && r.task == task_a) || (r.regime == Regime::Wd && r.task == task_b))
            .collect();
        let pick = |seed: u64, regime: Regime, variant: Variant| {
            results.iter().find(|r| r.seed == seed && r.regime == regime && r.variant == variant).and_then(|r| r.auroc)
        };
        let per_seed = self
            .seeds
            .iter()
            .map(|&seed| SeedScores {
                seed,
                st_base: pick(seed, Regime::St, Variant::Base),
                st_adv: pick(seed, Regime::St, Variant::Adv),
                wd_base: pick(seed, Regime::Wd, Variant::Base),
                wd_adv: pick(seed, Regime::Wd, Variant::Adv),
            })
            .collect();
        let report = Report::from_results(&results);
        if let Some(dir) = out_dir {
            write_results(&dir.join("results.csv"), &results)?;
            report.write(dir, false)?;
        }
        Ok(LeakageOutcome { oracle_b, per_seed, results, report, logs })
    }
}
