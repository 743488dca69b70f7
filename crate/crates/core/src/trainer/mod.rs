//! Episodic training with optional sample-wise gradient projection at the
//! representation boundary.

mod data;
mod fit;
mod model;
mod optim;
mod projection;

pub use data::{sample_episode, Database, Dataset, Episode, TaskData};
pub use fit::{evaluate_rows, fit, read_log, support_rows, write_log, FitOutcome, LogRecord};
pub use model::{train_step, Model, StepMetrics};
pub use optim::{AdamW, AdamWConfig};
pub use projection::{project_gradients, ProjectionReport, RowProjection};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::relgraph::GraphError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value, step aborted: {0}")]
    NonFinite(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub adversarial: bool,
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub n_support: usize,
    pub n_query: usize,
    pub seed: u64,
    /// Zero the support rows of the boundary gradient so only query-side
    /// (projected) gradients reach the backbone.
    pub detach_support: bool,
    /// Seed of the main-loss backward sweep.
    pub main_loss_weight: f64,
    /// Support rows drawn from a task's train split at evaluation time.
    pub eval_support: usize,
    /// Seeds per forward pass at evaluation time.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adversarial: false,
            optimizer: AdamWConfig::default(),
            epochs: 10,
            steps_per_epoch: 50,
            n_support: 64,
            n_query: 64,
            seed: 0,
            detach_support: false,
            main_loss_weight: 1.0,
            eval_support: 512,
            eval_batch: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let o = &self.optimizer;
        if !(o.lr > 0.0) {
            return Err(TrainError::Config(format!("optimizer.lr must be positive, got {}", o.lr)));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(TrainError::Config("optimizer betas must lie in [0, 1)".into()));
        }
        if !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return Err(TrainError::Config("optimizer.eps must be positive and weight_decay nonnegative".into()));
        }
        if self.n_support < 2 || self.n_query == 0 {
            return Err(TrainError::Config("n_support must be at least 2 and n_query positive".into()));
        }
        if self.eval_support < 2 || self.eval_batch == 0 {
            return Err(TrainError::Config("eval_support must be at least 2 and eval_batch positive".into()));
        }
        if !self.main_loss_weight.is_finite() {
            return Err(TrainError::Config("main_loss_weight must be finite".into()));
        }
        Ok(())
    }
}
