use std::collections::HashMap;

use rand::seq::index;
use rayon::prelude::*;

use super::graph::{HeteroGraph, NodeId};
use super::seeds;
use super::GraphError;

/// Local edges of one type within one layer; messages flow `src → dst`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SubgraphEdges {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl SubgraphEdges {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Disjoint union of per-seed temporal neighborhoods.
///
/// Local ids `0..seeds.len()` are the seeds in input order. A node reached
/// from two seeds appears once per seed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledSubgraph {
    pub seeds: Vec<(NodeId, i64)>,
    /// Local → global node id.
    pub global: Vec<NodeId>,
    /// Index of the seed each local node belongs to.
    pub seed_of: Vec<usize>,
    /// Hop distance from the owning seed.
    pub hop: Vec<usize>,
    /// `layers[ℓ][t]`: edges sampled at hop `ℓ + 1`, whose destinations lie at
    /// hop `ℓ` and sources at hop ≤ `ℓ + 1`.
    pub layers: Vec<Vec<SubgraphEdges>>,
}

impl SampledSubgraph {
    pub fn num_nodes(&self) -> usize {
        self.global.len()
    }

    pub fn num_edges(&self) -> usize {
        self.layers.iter().flatten().map(SubgraphEdges::len).sum()
    }

    /// Seed time governing a local node.
    pub fn time_of(&self, local: usize) -> i64 {
        self.seeds[self.seed_of[local]].1
    }
}

struct SeedSample {
    nodes: Vec<NodeId>,
    hops: Vec<usize>,
    layers: Vec<Vec<SubgraphEdges>>,
}

fn sample_one(g: &HeteroGraph, seed: NodeId, at: i64, fanout: &[usize], rng_seed: u64) -> SeedSample {
    let mut rng = seeds::stream(rng_seed, seed as u64);
    let n_types = g.num_edge_types();
    let mut nodes = vec![seed];
    let mut hops = vec![0];
    let mut local: HashMap<NodeId, usize> = HashMap::from([(seed, 0)]);
    let mut frontier = vec![0usize];
    let mut layers = Vec::with_capacity(fanout.len());
    for (l, &f) in fanout.iter().enumerate() {
        let mut layer = vec![SubgraphEdges::default(); n_types];
        let mut next = Vec::new();
        for &v_local in &frontier {
            let v = nodes[v_local];
            for (t, edges) in layer.iter_mut().enumerate() {
                let count = g.admissible_in_count(t, v, at);
                if count == 0 || f == 0 {
                    continue;
                }
                let picks = index::sample(&mut rng, count, f.min(count));
                for i in picks.iter() {
                    let u = g.admissible_in_nth(t, v, i);
                    let u_local = *local.entry(u).or_insert_with(|| {
                        nodes.push(u);
                        hops.push(l + 1);
                        next.push(nodes.len() - 1);
                        nodes.len() - 1
                    });
                    edges.src.push(u_local);
                    edges.dst.push(v_local);
                }
            }
        }
        layers.push(layer);
        frontier = next;
    }
    SeedSample { nodes, hops, layers }
}

/// Layered, time-respecting neighbor sampling.
///
/// At hop `ℓ` each frontier node draws, per edge type, up to `fanout[ℓ]`
/// in-edges uniformly without replacement among those with time ≤ its
/// seed's time. Each seed uses an rng stream derived from `(rng_seed, node)`,
/// so the result does not depend on thread scheduling. Pass `i64::MAX` as
/// the seed time for an untimed seed.
pub fn sample_neighborhood(
    g: &HeteroGraph,
    seeds: &[(NodeId, i64)],
    fanout: &[usize],
    rng_seed: u64,
) -> Result<SampledSubgraph, GraphError> {
    if let Some(&(bad, _)) = seeds.iter().find(|(n, _)| *n >= g.num_nodes()) {
        return Err(GraphError::UnknownSeed(bad));
    }
    let parts: Vec<SeedSample> = seeds.par_iter().map(|&(s, at)| sample_one(g, s, at, fanout, rng_seed)).collect();

    let n_seeds = seeds.len();
    let mut global: Vec<NodeId> = seeds.iter().map(|s| s.0).collect();
    let mut seed_of: Vec<usize> = (0..n_seeds).collect();
    let mut hop = vec![0; n_seeds];
    let mut layers = vec![vec![SubgraphEdges::default(); g.num_edge_types()]; fanout.len()];
    for (i, part) in parts.into_iter().enumerate() {
        let base = global.len();
        let map = |j: usize| if j == 0 { i } else { base + j - 1 };
        global.extend_from_slice(&part.nodes[1..]);
        hop.extend_from_slice(&part.hops[1..]);
        seed_of.extend(std::iter::repeat(i).take(part.nodes.len() - 1));
        for (out, layer) in layers.iter_mut().zip(part.layers) {
            for (o, e) in out.iter_mut().zip(layer) {
                o.src.extend(e.src.into_iter().map(map));
                o.dst.extend(e.dst.into_iter().map(map));
            }
        }
    }
    Ok(SampledSubgraph { seeds: seeds.to_vec(), global, seed_of, hop, layers })
}
