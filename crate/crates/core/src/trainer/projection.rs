use serde::{Deserialize, Serialize};

use crate::autodiff::{dot, Tensor2};

use super::TrainError;

/// What happened to one query row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowProjection {
    pub dot: f64,
    /// Zero when the gate stayed closed.
    pub alpha: f64,
    pub fired: bool,
    pub main_norm: f64,
    pub adv_norm: f64,
    pub refined_norm: f64,
}

/// Per-row outcome of [`project_gradients`]; the row tensors themselves are
/// the inputs and the returned refined gradient.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub rows: Vec<RowProjection>,
}

impl ProjectionReport {
    pub fn fire_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.fired).count() as f64 / self.rows.len() as f64
    }

    pub fn mean_cosine(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let cos = |r: &RowProjection| {
            let n = r.main_norm * r.adv_norm;
            if n > 0.0 {
                r.dot / n
            } else {
                0.0
            }
        };
        self.rows.iter().map(cos).sum::<f64>() / self.rows.len() as f64
    }

    /// Mean α over fired rows, 0 if none fired.
    pub fn mean_alpha(&self) -> f64 {
        let fired: Vec<f64> = self.rows.iter().filter(|r| r.fired).map(|r| r.alpha).collect();
        if fired.is_empty() {
            0.0
        } else {
            fired.iter().sum::<f64>() / fired.len() as f64
        }
    }
}

/// Removes from each row of `g_main` its component along the matching row
/// of `g_adv` when the two have a positive inner product.
pub fn project_gradients(g_main: &Tensor2, g_adv: &Tensor2) -> Result<(Tensor2, ProjectionReport), TrainError> {
    if g_main.shape() != g_adv.shape() {
        return Err(TrainError::Shape(format!(
            "main gradient {:?} and adversarial gradient {:?}",
            g_main.shape(),
            g_adv.shape()
        )));
    }
    let mut out = g_main.clone();
    let mut rows = Vec::with_capacity(g_main.rows());
    for i in 0..g_main.rows() {
        let (gm, ga) = (g_main.row(i), g_adv.row(i));
        let d = dot(gm, ga);
        let main_norm = norm(gm);
        let adv_norm = norm(ga);
        let mut report = RowProjection { dot: d, alpha: 0.0, fired: false, main_norm, adv_norm, refined_norm: main_norm };
        if d > 0.0 {
            let alpha = d / dot(ga, ga);
            let row = out.row_mut(i);
            for (o, a) in row.iter_mut().zip(ga) {
                *o -= alpha * a;
            }
            report.alpha = alpha;
            report.fired = true;
            report.refined_norm = norm(row);
        }
        rows.push(report);
    }
    Ok((out, ProjectionReport { rows }))
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}
