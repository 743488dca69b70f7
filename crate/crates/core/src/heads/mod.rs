//! The frozen in-context classifier and the adversarial label probe.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Tensor2, Var};
use crate::relgraph::seeds;

pub const ICL_EPS: f64 = 0.01;

/// Support and query representations for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeBatch {
    pub z_support: Tensor2,
    pub y_support: Vec<f64>,
    pub z_query: Tensor2,
    pub y_query: Vec<f64>,
}

impl EpisodeBatch {
    pub fn validate(&self) -> Result<(), AutodiffError> {
        check_support(&self.y_support)?;
        if self.z_support.rows() != self.y_support.len() || self.z_query.rows() != self.y_query.len() {
            return Err(AutodiffError::Dimension("labels and representations disagree in length".into()));
        }
        if self.z_support.cols() != self.z_query.cols() {
            return Err(AutodiffError::Dimension("support and query widths differ".into()));
        }
        Ok(())
    }
}

fn check_support(y: &[f64]) -> Result<(), AutodiffError> {
    if y.len() < 2 || !y.contains(&0.0) || !y.contains(&1.0) {
        return Err(AutodiffError::Contract("support set needs at least one label of each class".into()));
    }
    Ok(())
}

/// Softmax-kernel Nadaraya–Watson classifier over support labels. It has
/// no trainable parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrozenIclHead {
    pub tau: f64,
    pub eps: f64,
}

impl FrozenIclHead {
    /// `τ = √d`, `ε = 0.01`.
    pub fn new(d: usize) -> Self {
        Self { tau: (d as f64).sqrt(), eps: ICL_EPS }
    }

    /// `clamp(softmax(z_q · Z_sᵀ / τ) · y_s, ε, 1 − ε)` as an `n_q × 1`
    /// column, differentiable in both `zq` and `zs`.
    pub fn predict(&self, tape: &mut Tape, zq: Var, zs: Var, ys: &[f64]) -> Result<Var, AutodiffError> {
        check_support(ys)?;
        if tape.shape(zs).0 != ys.len() {
            return Err(AutodiffError::Dimension(format!("{} support rows, {} labels", tape.shape(zs).0, ys.len())));
        }
        let zst = tape.transpose(zs)?;
        let sim = tape.matmul(zq, zst)?;
        let sim = tape.scale(sim, 1.0 / self.tau)?;
        let att = tape.softmax_rows(sim)?;
        let y = tape.constant(Tensor2::column(ys.to_vec()))?;
        let p = tape.matmul(att, y)?;
        tape.clamp(p, self.eps, 1.0 - self.eps)
    }

    /// Tape-free evaluation of [`FrozenIclHead::predict`].
    pub fn predict_values(&self, zq: &Tensor2, zs: &Tensor2, ys: &[f64]) -> Result<Vec<f64>, AutodiffError> {
        check_support(ys)?;
        let sim = zq.matmul_nt(zs);
        let mut out = Vec::with_capacity(zq.rows());
        let mut row = vec![0.0; zs.rows()];
        for i in 0..zq.rows() {
            row.iter_mut().zip(sim.row(i)).for_each(|(r, s)| *r = s / self.tau);
            crate::autodiff::softmax_in_place(&mut row);
            let p: f64 = row.iter().zip(ys).map(|(a, y)| a * y).sum();
            out.push(p.clamp(self.eps, 1.0 - self.eps));
        }
        Ok(out)
    }
}

pub fn icl_predict(head: &FrozenIclHead, batch: &EpisodeBatch) -> Result<Vec<f64>, AutodiffError> {
    batch.validate()?;
    head.predict_values(&batch.z_query, &batch.z_support, &batch.y_support)
}

/// Mean binary cross-entropy of probabilities `probs` (`n × 1`).
pub fn main_loss(tape: &mut Tape, probs: Var, y: &[f64]) -> Result<Var, AutodiffError> {
    let n = tape.shape(probs).0;
    if y.len() != n {
        return Err(AutodiffError::Dimension(format!("{n} probabilities, {} labels", y.len())));
    }
    let log_p = tape.log(probs)?;
    let neg_p = tape.neg(probs)?;
    let ones = tape.constant(Tensor2::filled(n, 1, 1.0))?;
    let q = tape.add(ones, neg_p)?;
    let log_q = tape.log(q)?;
    let yv = tape.constant(Tensor2::column(y.to_vec()))?;
    let ny = tape.constant(Tensor2::column(y.iter().map(|v| 1.0 - v).collect()))?;
    let a = tape.mul(yv, log_p)?;
    let b = tape.mul(ny, log_q)?;
    let s = tape.add(a, b)?;
    let m = tape.mean_all(s)?;
    tape.neg(m)
}

/// `d → d/2 → 1` MLP with SiLU, trained to predict the label from `h`.
#[derive(Clone, Debug)]
pub struct AdversarialHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Loss and gradients of one adversarial evaluation.
#[derive(Clone, Debug)]
pub struct AdvOutput {
    /// Mean sigmoid cross-entropy over rows.
    pub loss: f64,
    /// Row `i` is the gradient of row `i`'s own loss w.r.t. `h_i`.
    pub row_grads: Tensor2,
    /// Gradients of the mean loss, indexed like the head's parameters
    /// `[w1, b1, w2, b2]`.
    pub param_grads: Vec<(ParamId, Tensor2)>,
}

impl AdversarialHead {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, seed: u64) -> Self {
        let hidden = (d / 2).max(1);
        let mut rng = seeds::stream(seed, 0xAD5);
        let mut gauss = |r: usize, c: usize, std: f64| {
            Tensor2::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal) * std)
        };
        let w1 = gauss(d, hidden, 1.0 / (d as f64).sqrt());
        let w2 = gauss(hidden, 1, 1.0 / (hidden as f64).sqrt());
        Self {
            w1: store.insert(format!("{prefix}w1"), w1),
            b1: store.insert(format!("{prefix}b1"), Tensor2::zeros(1, hidden)),
            w2: store.insert(format!("{prefix}w2"), w2),
            b2: store.insert(format!("{prefix}b2"), Tensor2::zeros(1, 1)),
        }
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self, AutodiffError> {
        let get = |n: &str| {
            store
                .id(&format!("{prefix}{n}"))
                .ok_or_else(|| AutodiffError::Checkpoint(format!("missing parameter {prefix}{n}")))
        };
        Ok(Self { w1: get("w1")?, b1: get("b1")?, w2: get("w2")?, b2: get("b2")? })
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    fn logits(&self, tape: &mut Tape, vars: &[Var; 4], h: Var) -> Result<Var, AutodiffError> {
        let a = tape.linear(h, vars[0], vars[1])?;
        let a = tape.silu(a)?;
        tape.linear(a, vars[2], vars[3])
    }

    /// Logits for each row of `h`.
    pub fn predict_logits(&self, store: &ParamStore, h: &Tensor2) -> Result<Vec<f64>, AutodiffError> {
        let mut tape = Tape::unchecked();
        let hv = tape.constant(h.clone())?;
        let mut vars = [hv; 4];
        for (v, id) in vars.iter_mut().zip(self.ids()) {
            *v = tape.constant(store.get(id).clone())?;
        }
        let z = self.logits(&mut tape, &vars, hv)?;
        Ok(tape.value(z).data().to_vec())
    }
}

/// Evaluates the adversary on a detached copy of `h`: per-row
/// representation gradients come from the summed loss, parameter gradients
/// from the mean loss.
pub fn adv_forward_loss(
    head: &AdversarialHead,
    store: &ParamStore,
    h: &Tensor2,
    y: &[f64],
) -> Result<AdvOutput, AutodiffError> {
    let n = h.rows();
    if y.len() != n || n == 0 {
        return Err(AutodiffError::Dimension(format!("{n} rows, {} labels", y.len())));
    }
    let mut tape = Tape::new();
    let hv = tape.param(h.clone())?;
    let mut vars = [hv; 4];
    for (v, id) in vars.iter_mut().zip(head.ids()) {
        *v = tape.param(store.get(id).clone())?;
    }
    let z = head.logits(&mut tape, &vars, hv)?;
    let per_row = tape.bce_with_logits(z, y.to_vec())?;
    let total = tape.sum_all(per_row)?;
    let loss = tape.value(total).item() / n as f64;
    let grads = tape.backward_from(total, 1.0)?;
    let row_grads = grads.get(hv).cloned().expect("h is a trainable leaf");
    let param_grads = head
        .ids()
        .into_iter()
        .zip(vars)
        .map(|(id, v)| (id, grads.get(v).expect("parameter leaf").scaled(1.0 / n as f64)))
        .collect();
    Ok(AdvOutput { loss, row_grads, param_grads })
}
