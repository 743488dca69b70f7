//! Synthetic relational databases with a label shortcut on one task and a
//! relational signal shared by both.
//!
//! Users interact with items. Each user has a latent affinity that shifts
//! the values of their interactions; the relational aggregate `r` is the
//! mean value over a user's interactions no later than the user's
//! observation time, so it is only visible through message passing. Task A
//! also depends on the `shortcut` column of the users table; task B does
//! not.

mod experiment;
mod probe;

pub use experiment::{LeakageExperiment, LeakageOutcome, SeedScores};
pub use probe::{fit_logistic, logistic_probe, Logistic};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{auroc, temporal_split};
use crate::relgraph::{
    seeds, ColumnData, ColumnKind, ColumnSchema, GraphError, RelationalBundle, SchemaManifest, TableData, TableSchema,
    TaskSchema,
};

pub const TASK_A: &str = "task_a";
pub const TASK_B: &str = "task_b";
pub const SPLIT_FRACTIONS: [f64; 3] = [0.7, 0.15, 0.15];

const T0: i64 = 1_600_000_000;
const DAY: i64 = 86_400;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid leakage spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("ground truth: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakageSpec {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    /// Weight of the relational aggregate in both tasks.
    pub rho: f64,
    /// Weight of the shortcut column in task A.
    pub sigma_s: f64,
    /// Fraction of positive labels.
    pub balance: f64,
    pub seed: u64,
    /// Extra factor on the shortcut weight of task A.
    pub shortcut_gain: f64,
    /// Scale of the logistic label noise.
    pub noise: f64,
    /// Fraction of interactions dated after the user's observation time.
    pub future_fraction: f64,
    /// Number of distinct observation times.
    pub snapshots: usize,
}

impl Default for LeakageSpec {
    fn default() -> Self {
        Self {
            users: 4000,
            items: 500,
            interactions: 40_000,
            rho: 0.8,
            sigma_s: 1.0,
            balance: 0.5,
            seed: 0,
            shortcut_gain: 1.0,
            noise: 0.25,
            future_fraction: 0.2,
            snapshots: 8,
        }
    }
}

impl LeakageSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: String| Err(SynthError::Spec(m));
        if self.users < 10 || self.items < 10 || self.interactions < 10 {
            return err(format!("counts must be at least 10, got {}/{}/{}", self.users, self.items, self.interactions));
        }
        if !(0.0..=1.0).contains(&self.rho) || !(0.0..=1.0).contains(&self.sigma_s) {
            return err("rho and sigma_s must lie in [0, 1]".into());
        }
        if !(self.balance > 0.0 && self.balance < 1.0) {
            return err(format!("balance {} must lie in (0, 1)", self.balance));
        }
        if !(0.0..1.0).contains(&self.future_fraction) || self.snapshots == 0 {
            return err("future_fraction must lie in [0, 1) and snapshots be positive".into());
        }
        if !(self.noise >= 0.0) || !(self.shortcut_gain >= 0.0) {
            return err("noise and shortcut_gain must be nonnegative".into());
        }
        if self.rho == 0.0 && self.sigma_s == 0.0 {
            log::warn!("rho and sigma_s are both zero; labels are pure noise");
        }
        Ok(())
    }
}

/// Generative latents of one user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub affinity: f64,
    /// Mean admissible interaction value, standardized over users.
    pub relational: f64,
    /// The shortcut column's value.
    pub shortcut: f64,
    /// Noise-free label scores.
    pub score_a: f64,
    pub score_b: f64,
    pub label_a: u8,
    pub label_b: u8,
}

/// Sidecar record of everything the labels were drawn from. Training code
/// never reads it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: LeakageSpec,
    /// `(relational, shortcut)` coefficients of each task's score.
    pub coef_a: [f64; 2],
    pub coef_b: [f64; 2],
    pub users: Vec<UserTruth>,
}

impl GroundTruth {
    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn score(&self, task: &str, user: usize) -> Option<f64> {
        let u = &self.users[user];
        match task {
            TASK_A => Some(u.score_a),
            TASK_B => Some(u.score_b),
            _ => None,
        }
    }
}

pub fn manifest() -> SchemaManifest {
    let col = ColumnSchema::new;
    let table = |name: &str, columns: Vec<ColumnSchema>| TableSchema { name: name.into(), file: format!("{name}.csv"), columns };
    let fk = |t: &str| ColumnKind::ForeignKey { target: t.into() };
    let task = |name: &str, label: &str| TaskSchema {
        name: name.into(),
        table: "users".into(),
        label: label.into(),
        timestamp: "observed_at".into(),
    };
    SchemaManifest {
        name: "synthetic".into(),
        tables: vec![
            table(
                "users",
                vec![
                    col("user_id", ColumnKind::PrimaryKey),
                    col("age", ColumnKind::Numeric),
                    col("region", ColumnKind::Categorical),
                    col("shortcut", ColumnKind::Numeric),
                    col("observed_at", ColumnKind::Timestamp),
                    col("label_a", ColumnKind::Numeric),
                    col("label_b", ColumnKind::Numeric),
                ],
            ),
            table(
                "items",
                vec![
                    col("item_id", ColumnKind::PrimaryKey),
                    col("quality", ColumnKind::Numeric),
                    col("category", ColumnKind::Categorical),
                ],
            ),
            table(
                "interactions",
                vec![
                    col("interaction_id", ColumnKind::PrimaryKey),
                    col("user_id", fk("users")),
                    col("item_id", fk("items")),
                    col("value", ColumnKind::Numeric),
                    col("ts", ColumnKind::Timestamp),
                ],
            ),
        ],
        tasks: vec![task(TASK_A, "label_a"), task(TASK_B, "label_b")],
    }
}

fn categorical(values: impl Iterator<Item = String>) -> ColumnData {
    let mut vocab: Vec<String> = Vec::new();
    let codes = values
        .map(|v| {
            let c = vocab.iter().position(|x| *x == v).unwrap_or_else(|| {
                vocab.push(v);
                vocab.len() - 1
            });
            Some(c as u32)
        })
        .collect();
    ColumnData::Categorical { codes, vocab }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let std = if std > 0.0 { std } else { 1.0 };
    x.iter().map(|v| (v - mean) / std).collect()
}

/// Labels `1` for the top `balance` fraction of `latent`, ties broken by
/// index.
fn threshold(latent: &[f64], balance: f64) -> Vec<u8> {
    let n = latent.len();
    let positives = ((n as f64) * balance).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| latent[b].total_cmp(&latent[a]).then(a.cmp(&b)));
    let mut y = vec![0u8; n];
    for &i in &order[..positives] {
        y[i] = 1;
    }
    y
}

fn logistic_noise(rng: &mut impl Rng, scale: f64) -> f64 {
    let u: f64 = rng.gen_range(1e-12..1.0 - 1e-12);
    scale * (u / (1.0 - u)).ln()
}

/// Builds the bundle and its ground truth; deterministic in `spec.seed`.
pub fn generate(spec: &LeakageSpec) -> Result<(RelationalBundle, GroundTruth), SynthError> {
    spec.validate()?;
    let manifest = manifest();
    let (nu, ni, ne) = (spec.users, spec.items, spec.interactions);
    let mut rng = seeds::stream(seeds::named(spec.seed, "synth"), 0);
    let span = 30 * DAY;

    let affinity: Vec<f64> = (0..nu).map(|_| rng.sample(StandardNormal)).collect();
    let shortcut: Vec<f64> = (0..nu).map(|_| round4(rng.sample(StandardNormal))).collect();
    let observed: Vec<i64> = (0..nu).map(|_| T0 + rng.gen_range(1..=spec.snapshots as i64) * span).collect();
    let age: Vec<f64> = (0..nu).map(|_| (rng.sample::<f64, _>(StandardNormal) * 12.0 + 40.0).round().max(18.0)).collect();
    let regions = ["north", "south", "east", "west", "central"];
    let region: Vec<&str> = (0..nu).map(|_| *regions.choose(&mut rng).expect("nonempty")).collect();

    let quality: Vec<f64> = (0..ni).map(|_| round4(rng.sample(StandardNormal))).collect();
    let category: Vec<String> = (0..ni).map(|_| format!("c{}", rng.gen_range(0..8))).collect();

    let value_noise = Normal::new(0.0, 0.5).expect("valid normal");
    let mut iu = Vec::with_capacity(ne);
    let mut ii = Vec::with_capacity(ne);
    let mut value = Vec::with_capacity(ne);
    let mut ts = Vec::with_capacity(ne);
    for _ in 0..ne {
        let u = rng.gen_range(0..nu);
        let i = rng.gen_range(0..ni);
        let t = if rng.gen_bool(spec.future_fraction) {
            observed[u] + rng.gen_range(1..=span)
        } else {
            rng.gen_range(T0..=observed[u])
        };
        iu.push(u);
        ii.push(i);
        value.push(round4(affinity[u] + 0.5 * quality[i] + value_noise.sample(&mut rng)));
        ts.push(t);
    }

    let mut sum = vec![0.0; nu];
    let mut count = vec![0usize; nu];
    for k in 0..ne {
        if ts[k] <= observed[iu[k]] {
            sum[iu[k]] += value[k];
            count[iu[k]] += 1;
        }
    }
    let raw_r: Vec<f64> = (0..nu).map(|u| if count[u] > 0 { sum[u] / count[u] as f64 } else { 0.0 }).collect();
    let relational = standardize(&raw_r);
    let shortcut_std = standardize(&shortcut);

    let coef_a = [spec.rho, spec.sigma_s * spec.shortcut_gain];
    let coef_b = [spec.rho, 0.0];
    let score_a: Vec<f64> = (0..nu).map(|u| coef_a[0] * relational[u] + coef_a[1] * shortcut_std[u]).collect();
    let score_b: Vec<f64> = (0..nu).map(|u| coef_b[0] * relational[u]).collect();
    let latent_a: Vec<f64> = score_a.iter().map(|s| s + logistic_noise(&mut rng, spec.noise)).collect();
    let latent_b: Vec<f64> = score_b.iter().map(|s| s + logistic_noise(&mut rng, spec.noise)).collect();
    let label_a = threshold(&latent_a, spec.balance);
    let label_b = threshold(&latent_b, spec.balance);

    let users = TableData {
        name: "users".into(),
        n_rows: nu,
        columns: vec![
            ColumnData::PrimaryKey((0..nu).map(|u| format!("u{u}")).collect()),
            ColumnData::Numeric(age.iter().map(|&a| Some(a)).collect()),
            categorical(region.iter().map(|r| r.to_string())),
            ColumnData::Numeric(shortcut.iter().map(|&s| Some(s)).collect()),
            ColumnData::Timestamp(observed.iter().map(|&t| Some(t)).collect()),
            ColumnData::Numeric(label_a.iter().map(|&y| Some(y as f64)).collect()),
            ColumnData::Numeric(label_b.iter().map(|&y| Some(y as f64)).collect()),
        ],
    };
    let items = TableData {
        name: "items".into(),
        n_rows: ni,
        columns: vec![
            ColumnData::PrimaryKey((0..ni).map(|i| format!("i{i}")).collect()),
            ColumnData::Numeric(quality.iter().map(|&q| Some(q)).collect()),
            categorical(category.into_iter()),
        ],
    };
    let interactions = TableData {
        name: "interactions".into(),
        n_rows: ne,
        columns: vec![
            ColumnData::PrimaryKey((0..ne).map(|k| format!("e{k}")).collect()),
            ColumnData::ForeignKey { target: 0, rows: iu.iter().map(|&u| Some(u)).collect() },
            ColumnData::ForeignKey { target: 1, rows: ii.iter().map(|&i| Some(i)).collect() },
            ColumnData::Numeric(value.iter().map(|&v| Some(v)).collect()),
            ColumnData::Timestamp(ts.iter().map(|&t| Some(t)).collect()),
        ],
    };
    let truth = GroundTruth {
        spec: spec.clone(),
        coef_a,
        coef_b,
        users: (0..nu)
            .map(|u| UserTruth {
                affinity: affinity[u],
                relational: relational[u],
                shortcut: shortcut_std[u],
                score_a: score_a[u],
                score_b: score_b[u],
                label_a: label_a[u],
                label_b: label_b[u],
            })
            .collect(),
    };
    let bundle = RelationalBundle { manifest, tables: vec![users, items, interactions], dangling: Vec::new() };
    Ok((bundle, truth))
}

/// Writes the bundle (CSVs and `manifest.json`) and `ground_truth.json`.
pub fn write(dir: &Path, bundle: &RelationalBundle, truth: &GroundTruth) -> Result<(), SynthError> {
    bundle.emit(dir)?;
    truth.save(&dir.join("ground_truth.json"))?;
    Ok(())
}

/// Test-split AUROC of the noise-free generative score: the best any model
/// of the observables can do in expectation.
pub fn oracle_auroc(bundle: &RelationalBundle, truth: &GroundTruth, task: &str) -> Result<Option<f64>, SynthError> {
    let rows = bundle.task_rows(task)?;
    let labeled = rows.labeled_rows();
    let times: Vec<i64> = labeled.iter().map(|&r| rows.times[r].unwrap_or(i64::MIN)).collect();
    let split = temporal_split(&times, SPLIT_FRACTIONS).map_err(|e| SynthError::Spec(e.to_string()))?;
    let mut scores = Vec::with_capacity(split.test.len());
    let mut labels = Vec::with_capacity(split.test.len());
    for &i in &split.test {
        let r = labeled[i];
        scores.push(truth.score(task, r).ok_or_else(|| SynthError::Spec(format!("unknown task {task}")))?);
        labels.push(rows.labels[r].expect("labeled"));
    }
    Ok(auroc(&scores, &labels))
}
