use rand::Rng;

use crate::relgraph::{seeds, HeteroGraph, NodeId};

pub const DEFAULT_WALK_LENGTH: usize = 32;
pub const DEFAULT_WALKS: usize = 100;

/// Stream key for the walks of `(node, at)`.
pub fn walk_key(node: NodeId, at: i64) -> u64 {
    seeds::mix64(node as u64) ^ (at as u64).rotate_left(29)
}

/// Monte-Carlo return probabilities of temporal random walks.
///
/// Each of `walks` walks starts at `node` and at every step moves along a
/// uniformly chosen out-edge (either direction) with time ≤ `at`. A walk
/// with no admissible move stops. Entry `s − 1` is the fraction of walks at
/// `node` after step `s`.
pub fn rwpe(g: &HeteroGraph, node: NodeId, at: i64, k: usize, walks: usize, rng_seed: u64) -> Vec<f64> {
    rwpe_traced(g, node, at, k, walks, rng_seed, |_, _, _| {})
}

/// [`rwpe`], calling `step(from, to, edge_time)` for every move taken.
pub fn rwpe_traced(
    g: &HeteroGraph,
    node: NodeId,
    at: i64,
    k: usize,
    walks: usize,
    rng_seed: u64,
    mut step: impl FnMut(NodeId, NodeId, i64),
) -> Vec<f64> {
    let mut rng = seeds::stream(rng_seed, walk_key(node, at));
    let mut returns = vec![0u32; k];
    for _ in 0..walks {
        let mut cur = node;
        for r in returns.iter_mut() {
            let adj = g.admissible_out(cur, at);
            if adj.is_empty() {
                break;
            }
            let (next, time) = adj[rng.gen_range(0..adj.len())];
            step(cur, next, time);
            cur = next;
            if cur == node {
                *r += 1;
            }
        }
    }
    let w = walks.max(1) as f64;
    returns.into_iter().map(|c| c as f64 / w).collect()
}
