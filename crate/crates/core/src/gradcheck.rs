//! Central finite-difference checks for tape-built scalar functions.
//!
//! Only forward values are used, so the numeric gradient is independent of
//! every backward rule it is compared against.

use crate::autodiff::{AutodiffError, Tape, Tensor2, Var};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` per input tensor.
    pub relative_errors: Vec<f64>,
    pub analytic: Vec<Tensor2>,
    pub numeric: Vec<Tensor2>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }

    /// Relative error of all inputs' gradients concatenated into one vector.
    pub fn overall_relative_error(&self) -> f64 {
        let flat = |ts: &[Tensor2]| {
            let data: Vec<f64> = ts.iter().flat_map(|t| t.data().iter().copied()).collect();
            Tensor2::from_vec(1, data.len(), data)
        };
        relative_error(&flat(&self.analytic), &flat(&self.numeric))
    }
}

/// Evaluates `f` on fresh tapes with the `inputs` bound as trainable leaves.
/// `f` must return a `1 × 1` loss.
pub fn check<F>(inputs: &[Tensor2], step: f64, f: F) -> Result<GradCheck, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |values: &[Tensor2]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars = values.iter().map(|v| tape.param(v.clone())).collect::<Result<Vec<_>, _>>()?;
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars = inputs.iter().map(|v| tape.param(v.clone())).collect::<Result<Vec<_>, _>>()?;
    let loss = f(&mut tape, &vars)?;
    let mut grads = tape.backward_from(loss, 1.0)?;
    if let Some(b) = tape.boundary() {
        if b.var().id() < loss.id() {
            let g = tape.boundary_grad()?.clone();
            grads = tape.resume_backward(&b, &g)?;
        }
    }
    let analytic: Vec<Tensor2> = vars.iter().map(|&v| grads.get(v).cloned().expect("leaf gradient")).collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for k in 0..inputs.len() {
        let mut g = Tensor2::zeros(inputs[k].rows(), inputs[k].cols());
        for e in 0..inputs[k].len() {
            let orig = work[k].data()[e];
            work[k].data_mut()[e] = orig + step;
            let up = eval(&work)?;
            work[k].data_mut()[e] = orig - step;
            let down = eval(&work)?;
            work[k].data_mut()[e] = orig;
            g.data_mut()[e] = (up - down) / (2.0 * step);
        }
        numeric.push(g);
    }

    let relative_errors = analytic.iter().zip(&numeric).map(|(a, n)| relative_error(a, n)).collect();
    Ok(GradCheck { relative_errors, analytic, numeric })
}

/// Norm-wise relative difference; two all-zero tensors compare as 0.
pub fn relative_error(a: &Tensor2, b: &Tensor2) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
