use crate::eval::{auroc, temporal_split};
use crate::relgraph::{ColumnData, RelationalBundle};

use super::{SynthError, SPLIT_FRACTIONS};

/// L2-regularised logistic regression on standardized inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Logistic {
    pub weights: Vec<f64>,
    pub bias: f64,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Logistic {
    /// Logit of one input row.
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.bias
            + x.iter().zip(&self.weights).zip(self.mean.iter().zip(&self.scale)).map(|((v, w), (m, s))| w * (v - m) / s).sum::<f64>()
    }
}

/// Newton iterations on the penalised log-likelihood (the bias is not
/// penalised).
pub fn fit_logistic(x: &[Vec<f64>], y: &[f64], l2: f64) -> Logistic {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; p];
    let mut scale = vec![0.0; p];
    for row in x {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n as f64);
    }
    for row in x {
        scale.iter_mut().zip(row.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n as f64);
    }
    scale.iter_mut().for_each(|s| *s = if *s > 0.0 { s.sqrt() } else { 1.0 });
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|row| std::iter::once(1.0).chain(row.iter().zip(mean.iter().zip(&scale)).map(|(v, (m, s))| (v - m) / s)).collect())
        .collect();
    let k = p + 1;
    let mut beta = vec![0.0; k];
    for _ in 0..50 {
        let mut hess = vec![vec![0.0; k]; k];
        let mut grad = vec![0.0; k];
        for (zi, &yi) in z.iter().zip(y) {
            let eta: f64 = zi.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = 1.0 / (1.0 + (-eta).exp());
            let w = (mu * (1.0 - mu)).max(1e-12);
            for a in 0..k {
                grad[a] += (yi - mu) * zi[a];
                for b in 0..k {
                    hess[a][b] += w * zi[a] * zi[b];
                }
            }
        }
        for a in 1..k {
            grad[a] -= l2 * beta[a];
            hess[a][a] += l2;
        }
        let step = solve(hess, grad);
        let size: f64 = step.iter().map(|s| s.abs()).sum();
        beta.iter_mut().zip(&step).for_each(|(b, s)| *b += s);
        if size < 1e-10 {
            break;
        }
    }
    Logistic { bias: beta[0], weights: beta[1..].to_vec(), mean, scale }
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).expect("nonempty");
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        if d.abs() < 1e-300 {
            continue;
        }
        for r in col + 1..n {
            let f = a[r][col] / d;
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = if a[r][r].abs() < 1e-300 { 0.0 } else { (b[r] - s) / a[r][r] };
    }
    x
}

/// Test AUROC of a logistic regression fitted on the train split using only
/// the task table's own non-label columns (numeric as is, categorical
/// one-hot, nulls as 0).
pub fn logistic_probe(bundle: &RelationalBundle, task: &str) -> Result<Option<f64>, SynthError> {
    let m = &bundle.manifest;
    let rows = bundle.task_rows(task)?;
    let schema = &m.tables[rows.table];
    let table = &bundle.tables[rows.table];
    let labels = m.label_columns(&schema.name);
    let labeled = rows.labeled_rows();
    let features: Vec<Vec<f64>> = labeled
        .iter()
        .map(|&r| {
            let mut v = Vec::new();
            for (cs, col) in schema.columns.iter().zip(&table.columns) {
                if labels.contains(cs.name.as_str()) {
                    continue;
                }
                match col {
                    ColumnData::Numeric(x) => v.push(x[r].unwrap_or(0.0)),
                    ColumnData::Categorical { codes, vocab } => {
                        v.extend((0..vocab.len()).map(|c| if codes[r] == Some(c as u32) { 1.0 } else { 0.0 }))
                    }
                    _ => {}
                }
            }
            v
        })
        .collect();
    let y: Vec<f64> = labeled.iter().map(|&r| rows.labels[r].expect("labeled")).collect();
    let times: Vec<i64> = labeled.iter().map(|&r| rows.times[r].unwrap_or(i64::MIN)).collect();
    let split = temporal_split(&times, SPLIT_FRACTIONS).map_err(|e| SynthError::Spec(e.to_string()))?;
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
        (idx.iter().map(|&i| features[i].clone()).collect(), idx.iter().map(|&i| y[i]).collect())
    };
    let (xt, yt) = pick(&split.train);
    let model = fit_logistic(&xt, &yt, 1e-3);
    let (xs, ys) = pick(&split.test);
    let scores: Vec<f64> = xs.iter().map(|x| model.logit(x)).collect();
    Ok(auroc(&scores, &ys))
}
