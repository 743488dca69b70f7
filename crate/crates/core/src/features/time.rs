use std::f64::consts::PI;

use crate::relgraph::STATIC_TIME;

pub const DEFAULT_TIME_PAIRS: usize = 4;

pub fn time_width(pairs: usize) -> usize {
    1 + 2 * pairs
}

/// `[index, sin(ω_0 t'), cos(ω_0 t'), …]` with `t' = t − t_min`,
/// `ω_j = 2π·2^j / (t_max − t_min)` and the index clamped to `[0, 1]`.
/// Static times give index 0, sines 0, cosines 1.
pub fn time_features(t: i64, t_min: i64, t_max: i64, pairs: usize) -> Vec<f64> {
    assert!(t_min < t_max, "time range must be non-empty");
    let mut out = Vec::with_capacity(time_width(pairs));
    if t == STATIC_TIME {
        out.push(0.0);
        for _ in 0..pairs {
            out.extend([0.0, 1.0]);
        }
        return out;
    }
    let span = (t_max - t_min) as f64;
    let shifted = (t as i128 - t_min as i128) as f64;
    out.push((shifted / span).clamp(0.0, 1.0));
    for j in 0..pairs {
        let w = 2.0 * PI * 2f64.powi(j as i32) / span;
        let (s, c) = (w * shifted).sin_cos();
        out.extend([s, c]);
    }
    out
}
