use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tensor2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Adam with decoupled weight decay. Moments are kept per parameter id and
/// the bias-correction step counter advances once per [`AdamW::step`].
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    t: u64,
    moments: Vec<Option<(Tensor2, Tensor2)>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, t: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates exactly the parameters listed in `grads`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor2)]) {
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        for (id, g) in grads {
            let p = store.get_mut(*id);
            assert_eq!(p.shape(), g.shape(), "gradient shape for {id:?}");
            let (m, v) = self.moments[id.0]
                .get_or_insert_with(|| (Tensor2::zeros(g.rows(), g.cols()), Tensor2::zeros(g.rows(), g.cols())));
            for (((w, gi), mi), vi) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut())
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *w);
            }
        }
    }
}
