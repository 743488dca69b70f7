//! Supervision regimes, temporal splits, AUROC and result tables.

mod metrics;
mod regimes;
mod report;
mod run;

pub use metrics::{auroc, temporal_split, Split};
pub use regimes::{build_regimes, Regime, RegimeSpec, TaskRef};
pub use report::{read_results, write_results, EvalResult, Report, ReportRow, Variant, AVERAGE_LABEL};
pub use run::{evaluate_cells, plan_jobs, run_matrix, train_job, MatrixConfig, MatrixOutcome, TrainingJob};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} rows are too few to split")]
    TooFewRows(usize),
    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
