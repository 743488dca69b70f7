use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, BoundaryHandle, ParamId, ParamStore, Tape, Tensor2, Var};
use crate::backbone::{backbone_forward, BackboneConfig, BackboneInput, BackboneParams};
use crate::heads::{adv_forward_loss, main_loss, AdversarialHead, FrozenIclHead};
use crate::relgraph::{sample_neighborhood, NodeId};

use super::data::{Database, Dataset, Episode};
use super::optim::AdamW;
use super::projection::{project_gradients, ProjectionReport};
use super::{TrainConfig, TrainError};

const BACKBONE_PREFIX: &str = "backbone.";
const ADVERSARY_PREFIX: &str = "adversary.";

/// Backbone plus adversarial head in one parameter store; the ICL head has
/// no parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: BackboneConfig,
    pub in_width: usize,
    pub store: ParamStore,
    pub backbone: BackboneParams,
    pub adversary: AdversarialHead,
    pub icl: FrozenIclHead,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    backbone: BackboneConfig,
    in_width: usize,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Scalars recorded for one training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub main_loss: f64,
    pub adv_loss: Option<f64>,
    pub gate_fire_rate: f64,
    pub mean_alpha: f64,
    /// Mean cosine between main and adversarial rows (0 for zero rows).
    pub mean_cosine: f64,
    /// Mean per-query norms of the captured main, adversarial and refined
    /// boundary gradients.
    pub grad_norm_main: f64,
    pub grad_norm_adv: f64,
    pub grad_norm_refined: f64,
}

impl Model {
    pub fn init(config: &BackboneConfig, in_width: usize, seed: u64) -> Result<Self, TrainError> {
        let mut store = ParamStore::new();
        let backbone = BackboneParams::init(&mut store, BACKBONE_PREFIX, config, in_width, seed)?;
        let adversary = AdversarialHead::init(&mut store, ADVERSARY_PREFIX, config.d, seed);
        Ok(Self { config: config.clone(), in_width, store, backbone, adversary, icl: FrozenIclHead::new(config.d) })
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), TrainError> {
        let meta = ModelMeta { backbone: self.config.clone(), in_width: self.in_width, extra };
        self.store.save(path, serde_json::to_value(meta).expect("meta serializes"))?;
        Ok(())
    }

    /// Returns the model and the `extra` metadata stored with it.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), TrainError> {
        let (store, meta) = ParamStore::load(path)?;
        let meta: ModelMeta =
            serde_json::from_value(meta).map_err(|e| TrainError::Data(format!("checkpoint metadata: {e}")))?;
        let backbone = BackboneParams::lookup(&store, BACKBONE_PREFIX, &meta.backbone)?;
        let adversary = AdversarialHead::lookup(&store, ADVERSARY_PREFIX)?;
        let icl = FrozenIclHead::new(meta.backbone.d);
        Ok((Self { config: meta.backbone, in_width: meta.in_width, store, backbone, adversary, icl }, meta.extra))
    }

    /// Ids of the parameters below the boundary.
    pub fn backbone_ids(&self) -> Vec<ParamId> {
        let adv = self.adversary.ids();
        (0..self.store.len()).map(ParamId).filter(|id| !adv.contains(id)).collect()
    }

    /// Samples the seeds' neighborhoods and records the backbone forward on
    /// `tape`; row `i` of the result is seed `i`'s representation.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        db: &Database,
        seeds: &[(NodeId, i64)],
        fanout: &[usize],
        sample_seed: u64,
    ) -> Result<(Var, BoundaryHandle), TrainError> {
        if fanout.len() != self.config.layers {
            return Err(TrainError::Config(format!(
                "fanout has {} hops, backbone has {} layers",
                fanout.len(),
                self.config.layers
            )));
        }
        let sub = sample_neighborhood(&db.graph, seeds, fanout, sample_seed)?;
        let features = db.featurizer.subgraph_features(&db.graph, &sub);
        let table_index: Vec<usize> = sub.global.iter().map(|&n| db.node_table[n]).collect();
        let input = BackboneInput {
            features: &features,
            table_index: &table_index,
            layers: &sub.layers,
            reversed: &db.reversed,
            n_out: seeds.len(),
        };
        Ok(backbone_forward(tape, &self.config, &self.backbone, bound, input)?)
    }

    /// Representations of `seeds`, computed in chunks of `batch` without
    /// recording gradients. Neighborhood samples depend only on
    /// `(sample_seed, node)`, so chunking does not change the result.
    pub fn represent(
        &self,
        db: &Database,
        seeds: &[(NodeId, i64)],
        fanout: &[usize],
        sample_seed: u64,
        batch: usize,
    ) -> Result<Tensor2, TrainError> {
        let mut data = Vec::with_capacity(seeds.len() * self.config.d);
        for chunk in seeds.chunks(batch.max(1)) {
            let mut tape = Tape::unchecked();
            let bound = self.store.bind(&mut tape)?;
            let (h, _) = self.forward(&mut tape, &bound, db, chunk, fanout, sample_seed)?;
            data.extend_from_slice(tape.value(h).data());
        }
        Ok(Tensor2::from_vec(seeds.len(), self.config.d, data))
    }
}

/// One optimisation step on `episode`.
///
/// The main loss is swept back to the representation boundary. With the
/// adversary enabled, each query row of the captured gradient is projected
/// against the adversary's per-row gradient; the adversary sees a detached
/// copy of `h` for every episode row. The possibly refined gradient is then
/// carried into the backbone, and AdamW updates the backbone and (if
/// enabled) the adversary from its own mean loss.
pub fn train_step(
    model: &mut Model,
    opt: &mut AdamW,
    ds: &Dataset,
    episode: &Episode,
    cfg: &TrainConfig,
    sample_seed: u64,
) -> Result<StepMetrics, TrainError> {
    let task = &ds.tasks[episode.task];
    let db = &ds.databases[task.db];
    let ns = episode.support.len();
    let nq = episode.query.len();
    let seeds: Vec<(NodeId, i64)> = episode.support.iter().chain(&episode.query).map(|&r| task.seed(r)).collect();
    let ys = task.labels_of(&episode.support);
    let yq = task.labels_of(&episode.query);

    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape)?;
    let (h, handle) = model.forward(&mut tape, &bound, db, &seeds, &db.featurizer.config.fanout, sample_seed)?;
    let zs = tape.gather_rows(h, (0..ns).collect())?;
    let zq = tape.gather_rows(h, (ns..ns + nq).collect())?;
    let probs = model.icl.predict(&mut tape, zq, zs, &ys)?;
    let loss = main_loss(&mut tape, probs, &yq)?;
    let main_value = tape.value(loss).item();
    if !main_value.is_finite() {
        return Err(TrainError::NonFinite(format!("main loss {main_value}")));
    }
    tape.backward_from(loss, cfg.main_loss_weight)?;
    let captured = tape.boundary_grad()?.clone();
    let query_rows: Vec<usize> = (ns..ns + nq).collect();
    let g_main = captured.gather_rows(&query_rows);

    let mut injected = captured;
    let mut metrics = StepMetrics {
        main_loss: main_value,
        adv_loss: None,
        gate_fire_rate: 0.0,
        mean_alpha: 0.0,
        mean_cosine: 0.0,
        grad_norm_main: mean_row_norm(&g_main),
        grad_norm_adv: 0.0,
        grad_norm_refined: mean_row_norm(&g_main),
    };
    let mut updates: Vec<(ParamId, Tensor2)> = Vec::new();
    if cfg.adversarial {
        let labels: Vec<f64> = ys.iter().chain(&yq).copied().collect();
        let adv = adv_forward_loss(&model.adversary, &model.store, tape.value(h), &labels)?;
        if !adv.loss.is_finite() {
            return Err(TrainError::NonFinite(format!("adversarial loss {}", adv.loss)));
        }
        let g_adv = adv.row_grads.gather_rows(&query_rows);
        let (refined, report) = project_gradients(&g_main, &g_adv)?;
        for (k, &row) in query_rows.iter().enumerate() {
            injected.row_mut(row).copy_from_slice(refined.row(k));
        }
        fill_projection(&mut metrics, &report, &g_adv, &refined);
        metrics.adv_loss = Some(adv.loss);
        updates.extend(adv.param_grads);
    }
    if cfg.detach_support {
        for r in 0..ns {
            injected.row_mut(r).iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let grads = tape.resume_backward(&handle, &injected)?;
    let mut below: Vec<(ParamId, Tensor2)> = model
        .backbone_ids()
        .into_iter()
        .map(|id| (id, grads.get(bound.var(id)).cloned().expect("bound parameter gradient")))
        .collect();
    below.extend(updates);
    if let Some((id, _)) = below.iter().find(|(_, g)| !g.is_finite()) {
        return Err(TrainError::NonFinite(format!("gradient of {}", model.store.name(*id))));
    }
    opt.step(&mut model.store, &below);
    Ok(metrics)
}

fn fill_projection(m: &mut StepMetrics, report: &ProjectionReport, g_adv: &Tensor2, refined: &Tensor2) {
    m.gate_fire_rate = report.fire_rate();
    m.mean_alpha = report.mean_alpha();
    m.mean_cosine = report.mean_cosine();
    m.grad_norm_adv = mean_row_norm(g_adv);
    m.grad_norm_refined = mean_row_norm(refined);
}

fn mean_row_norm(t: &Tensor2) -> f64 {
    if t.rows() == 0 {
        return 0.0;
    }
    (0..t.rows()).map(|i| t.row(i).iter().map(|x| x * x).sum::<f64>().sqrt()).sum::<f64>() / t.rows() as f64
}
