use rand::seq::index::sample;
use rand::Rng;

use crate::eval::{temporal_split, Split, TaskRef};
use crate::features::{time_range, FeatureConfig, Featurizer, FrozenRowEncoder};
use crate::relgraph::{HeteroGraph, NodeId, RelationalBundle, STATIC_TIME};

use super::TrainError;

/// One ingested database with its graph and featurizer.
pub struct Database {
    pub bundle: RelationalBundle,
    pub graph: HeteroGraph,
    pub featurizer: Featurizer,
    /// Table ordinal of each global node.
    pub node_table: Vec<usize>,
    /// Whether each edge type is a reversed twin.
    pub reversed: Vec<bool>,
    /// Latest train-split timestamp over all tasks; rows after it are not
    /// used to fit the encoder.
    pub train_cutoff: i64,
}

impl Database {
    pub fn name(&self) -> &str {
        &self.bundle.manifest.name
    }
}

/// Labeled rows of one task, aligned by index.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub id: TaskRef,
    pub db: usize,
    pub nodes: Vec<NodeId>,
    /// Seed time per row (`i64::MAX` for untimed rows).
    pub times: Vec<i64>,
    pub labels: Vec<f64>,
    pub split: Split,
}

impl TaskData {
    pub fn seed(&self, row: usize) -> (NodeId, i64) {
        (self.nodes[row], self.times[row])
    }

    pub fn labels_of(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&r| self.labels[r]).collect()
    }
}

pub struct Dataset {
    pub databases: Vec<Database>,
    pub tasks: Vec<TaskData>,
}

impl Dataset {
    /// Builds graphs, temporal splits and featurizers. The row encoder and
    /// the time range are fitted on rows no later than the last train-split
    /// timestamp of the database (static rows included).
    pub fn build(bundles: Vec<RelationalBundle>, features: &FeatureConfig, fractions: [f64; 3]) -> Result<Self, TrainError> {
        let mut databases = Vec::with_capacity(bundles.len());
        let mut tasks = Vec::new();
        for (db, bundle) in bundles.into_iter().enumerate() {
            let graph = HeteroGraph::build(&bundle);
            let mut cutoff = None::<i64>;
            for schema in &bundle.manifest.tasks {
                let rows = bundle.task_rows(&schema.name)?;
                let labeled = rows.labeled_rows();
                let split_times: Vec<i64> = labeled.iter().map(|&r| rows.times[r].unwrap_or(STATIC_TIME)).collect();
                let split = temporal_split(&split_times, fractions)
                    .map_err(|e| TrainError::Data(format!("{}/{}: {e}", bundle.manifest.name, schema.name)))?;
                for &i in &split.train {
                    if split_times[i] != STATIC_TIME {
                        cutoff = Some(cutoff.map_or(split_times[i], |c| c.max(split_times[i])));
                    }
                }
                tasks.push(TaskData {
                    id: TaskRef::new(&bundle.manifest.name, &schema.name),
                    db,
                    nodes: labeled.iter().map(|&r| graph.node(rows.table, r)).collect(),
                    times: labeled.iter().map(|&r| rows.times[r].unwrap_or(i64::MAX)).collect(),
                    labels: labeled.iter().map(|&r| rows.labels[r].expect("labeled row")).collect(),
                    split,
                });
            }
            let train_cutoff = cutoff.unwrap_or(i64::MAX);
            let admitted = |n: NodeId| {
                let t = graph.node_time(n);
                t == STATIC_TIME || t <= train_cutoff
            };
            let encoder = FrozenRowEncoder::fit(&bundle, features.d_enc, features.buckets, |t, r| admitted(graph.node(t, r)));
            let (t_min, t_max) = time_range(&graph, admitted);
            let featurizer = Featurizer::new(features.clone(), encoder, &bundle, &graph, t_min, t_max);
            let node_table = (0..graph.num_nodes()).map(|n| graph.locate(n).0).collect();
            let reversed = graph.edge_types().iter().map(|e| e.reversed).collect();
            databases.push(Database { bundle, graph, featurizer, node_table, reversed, train_cutoff });
        }
        Ok(Self { databases, tasks })
    }

    pub fn task_index(&self, id: &TaskRef) -> Option<usize> {
        self.tasks.iter().position(|t| &t.id == id)
    }

    pub fn feature_width(&self) -> usize {
        self.databases.first().map_or(0, |d| d.featurizer.width())
    }

    pub fn database_of(&self, task: usize) -> &Database {
        &self.databases[self.tasks[task].db]
    }
}

/// Support rows first, then query rows; indices into the task's rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub task: usize,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

/// Draws `n_s + n_q` distinct rows from `pool` (shrunk proportionally if the
/// pool is smaller) and makes sure the support holds both classes.
pub fn sample_episode(
    task_index: usize,
    task: &TaskData,
    pool: &[usize],
    n_s: usize,
    n_q: usize,
    rng: &mut impl Rng,
) -> Result<Episode, TrainError> {
    let has = |c: f64| pool.iter().any(|&r| task.labels[r] == c);
    if !has(0.0) || !has(1.0) {
        return Err(TrainError::Data(format!("{}: training rows hold a single class", task.id)));
    }
    let want = n_s + n_q;
    let n = want.min(pool.len());
    let ns = (((n * n_s) as f64 / want as f64).round() as usize).max(2).min(n);
    if n < 2 || (n_q > 0 && ns >= n) {
        return Err(TrainError::Data(format!("{}: {} training rows cannot form an episode", task.id, pool.len())));
    }
    let mut picked: Vec<usize> = sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect();
    for class in [0.0, 1.0] {
        if picked[..ns].iter().any(|&r| task.labels[r] == class) {
            continue;
        }
        let slot = rng.gen_range(0..ns);
        if let Some(j) = (ns..n).find(|&j| task.labels[picked[j]] == class) {
            picked.swap(slot, j);
        } else {
            let outside: Vec<usize> =
                pool.iter().copied().filter(|r| task.labels[*r] == class && !picked.contains(r)).collect();
            picked[slot] = outside[rng.gen_range(0..outside.len())];
        }
    }
    let query = picked.split_off(ns);
    Ok(Episode { task: task_index, support: picked, query })
}
