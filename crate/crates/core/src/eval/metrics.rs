use serde::{Deserialize, Serialize};

use super::EvalError;

/// Row indices of the three temporal splits.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stable sort by time, then cut at `round(f_train·n)` and
/// `round((f_train + f_val)·n)`. No test row precedes a train row.
pub fn temporal_split(times: &[i64], fractions: [f64; 3]) -> Result<Split, EvalError> {
    let n = times.len();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(EvalError::Config(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    if n < 3 {
        return Err(EvalError::TooFewRows(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| times[i]);
    if times.iter().all(|&t| t == times[0]) {
        log::warn!("all {n} timestamps are equal; splitting in row order");
    }
    let a = ((fractions[0] * n as f64).round() as usize).min(n);
    let b = (((fractions[0] + fractions[1]) * n as f64).round() as usize).clamp(a, n);
    Ok(Split { train: order[..a].to_vec(), val: order[a..b].to_vec(), test: order[b..].to_vec() })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, from average ranks. `None` unless both classes occur.
pub fn auroc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1.0).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}
