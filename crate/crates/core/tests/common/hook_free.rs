use kspace::autodiff::{ParamId, Tape, Tensor2};
use kspace::backbone::{hetero_block, input_project, rope_table};
use kspace::heads::main_loss;
use kspace::relgraph::{sample_neighborhood, seeds};
use kspace::trainer::{sample_episode, AdamW, Dataset, Episode, Model, TrainConfig};

pub fn episode(ds: &Dataset, step: u64, cfg: &TrainConfig) -> Episode {
    let task = &ds.tasks[0];
    let mut rng = seeds::stream(99, step);
    sample_episode(0, task, &task.split.train, cfg.n_support, cfg.n_query, &mut rng).unwrap()
}

/// One step of a plain training loop whose tape never marks a boundary.
pub fn hook_free_step(model: &mut Model, opt: &mut AdamW, ds: &Dataset, ep: &Episode, sample_seed: u64) {
    let task = &ds.tasks[ep.task];
    let db = &ds.databases[task.db];
    let seeds: Vec<_> = ep.support.iter().chain(&ep.query).map(|&r| task.seed(r)).collect();
    let (ns, nq) = (ep.support.len(), ep.query.len());
    let sub = sample_neighborhood(&db.graph, &seeds, &db.featurizer.config.fanout, sample_seed).unwrap();
    let features = db.featurizer.subgraph_features(&db.graph, &sub);
    let table_index: Vec<usize> = sub.global.iter().map(|&n| db.node_table[n]).collect();

    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape).unwrap();
    let p = &model.backbone;
    let f = tape.constant(features).unwrap();
    let x0 = input_project(&mut tape, p, &bound, f).unwrap();
    let mut x = rope_table(&mut tape, x0, &table_index, model.config.rope_base).unwrap();
    for (l, (rev, fwd)) in p.blocks.iter().enumerate() {
        let shell = &sub.layers[model.config.layers - 1 - l];
        x = hetero_block(&mut tape, &bound, rev, fwd, x, shell, &db.reversed).unwrap();
    }
    let n = seeds.len();
    let s = if n == sub.global.len() { x } else { tape.gather_rows(x, (0..n).collect()).unwrap() };
    let h = tape.linear(s, bound.var(p.output_w), bound.var(p.output_b)).unwrap();
    let zs = tape.gather_rows(h, (0..ns).collect()).unwrap();
    let zq = tape.gather_rows(h, (ns..ns + nq).collect()).unwrap();
    let probs = model.icl.predict(&mut tape, zq, zs, &task.labels_of(&ep.support)).unwrap();
    let loss = main_loss(&mut tape, probs, &task.labels_of(&ep.query)).unwrap();
    assert!(tape.boundary().is_none());
    let grads = tape.backward_from(loss, 1.0).unwrap();
    let updates: Vec<(ParamId, Tensor2)> =
        model.backbone_ids().into_iter().map(|id| (id, grads.get(bound.var(id)).unwrap().clone())).collect();
    opt.step(&mut model.store, &updates);
}

pub fn same_params(a: &Model, b: &Model, ids: &[ParamId]) -> bool {
    let bits = |m: &Model, id: ParamId| m.store.get(id).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ids.iter().all(|&id| bits(a, id) == bits(b, id))
}
