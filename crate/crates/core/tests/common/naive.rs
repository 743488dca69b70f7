//! Straight-line oracles shared by the unit and acceptance suites.

use kspace::autodiff::{ParamStore, Tensor2, LAYER_NORM_EPS};
use kspace::backbone::{BackboneConfig, BackboneInput, BackboneParams, ConvKind, SubBlockParams};
use kspace::relgraph::{HeteroGraph, SubgraphEdges};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type M = Vec<Vec<f64>>;

pub fn to_m(t: &Tensor2) -> M {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn mm(a: &M, b: &M) -> M {
    a.iter().map(|r| (0..b[0].len()).map(|j| r.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect()).collect()
}

pub fn affine(a: &M, w: &M, b: &M) -> M {
    mm(a, w).into_iter().map(|r| r.iter().zip(&b[0]).map(|(x, y)| x + y).collect()).collect()
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn ln(a: &M, g: &M, b: &M) -> M {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mu = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
            r.iter().enumerate().map(|(j, x)| (x - mu) / (var + LAYER_NORM_EPS).sqrt() * g[0][j] + b[0][j]).collect()
        })
        .collect()
}

pub fn rope(a: &M, m: &[usize], base: f64) -> M {
    let d = a[0].len();
    a.iter()
        .zip(m)
        .map(|(r, &m)| {
            let mut o = r.clone();
            for i in 0..d / 2 {
                let ang = m as f64 * base.powf(-2.0 * i as f64 / d as f64);
                o[2 * i] = r[2 * i] * ang.cos() - r[2 * i + 1] * ang.sin();
                o[2 * i + 1] = r[2 * i] * ang.sin() + r[2 * i + 1] * ang.cos();
            }
            o
        })
        .collect()
}

/// Literal sub-block on every row.
pub fn naive_sub_block(s: &ParamStore, p: &SubBlockParams, x: &M, e: &SubgraphEdges) -> M {
    let v = |id| to_m(s.get(id));
    let n = x.len();
    let d = x[0].len();
    let u = affine(&ln(x, &v(p.ln1_g), &v(p.ln1_b)), &v(p.lin_w), &v(p.lin_b));
    let msg = mm(&u, &v(p.conv_w));
    let mut conv = vec![vec![0.0; d]; n];
    match p.attention {
        None => {
            let mut deg = vec![0.0; n];
            for k in 0..e.len() {
                deg[e.dst[k]] += 1.0;
                for j in 0..d {
                    conv[e.dst[k]][j] += msg[e.src[k]][j];
                }
            }
            for i in 0..n {
                if deg[i] > 0.0 {
                    conv[i].iter_mut().for_each(|c| *c /= deg[i]);
                }
            }
        }
        Some((wd, att)) => {
            let r = mm(&u, &v(wd));
            let att = v(att);
            let heads = p.heads;
            let dh = d / heads;
            for i in 0..n {
                let inc: Vec<usize> = (0..e.len()).filter(|&k| e.dst[k] == i).collect();
                for h in 0..heads {
                    let scores: Vec<f64> = inc
                        .iter()
                        .map(|&k| (h * dh..(h + 1) * dh).map(|j| silu(msg[e.src[k]][j] + r[i][j]) * att[j][h]).sum())
                        .collect();
                    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
                    for (q, &k) in inc.iter().enumerate() {
                        let a = (scores[q] - mx).exp() / z;
                        for j in h * dh..(h + 1) * dh {
                            conv[i][j] += a * msg[e.src[k]][j];
                        }
                    }
                }
            }
        }
    }
    let s1 = s.get(p.scale1).item();
    let s2 = s.get(p.scale2).item();
    let y: M = x.iter().zip(&conv).map(|(xr, cr)| xr.iter().zip(cr).map(|(a, c)| a + s1 * silu(*c)).collect()).collect();
    let f = affine(&ln(&y, &v(p.ln2_g), &v(p.ln2_b)), &v(p.ff_w), &v(p.ff_b));
    f.into_iter().map(|r| r.into_iter().map(|a| s2 * silu(a)).collect()).collect()
}

/// Per-type loop with full-row messages masked to each type's destinations.
pub fn naive_hetero(s: &ParamStore, rev: &SubBlockParams, fwd: &SubBlockParams, x: &M, edges: &[SubgraphEdges], reversed: &[bool]) -> M {
    let n = x.len();
    let d = x[0].len();
    let mut a = vec![vec![0.0; d]; n];
    let mut c = vec![0.0; n];
    for (t, e) in edges.iter().enumerate() {
        let mut in_d = vec![false; n];
        e.dst.iter().for_each(|&i| in_d[i] = true);
        let msg = naive_sub_block(s, if reversed[t] { rev } else { fwd }, x, e);
        for i in 0..n {
            if in_d[i] {
                c[i] += 1.0;
                for j in 0..d {
                    a[i][j] += msg[i][j];
                }
            }
        }
    }
    (0..n).map(|i| (0..d).map(|j| x[i][j] + a[i][j] / f64::max(c[i], 1.0)).collect()).collect()
}

pub fn naive_backbone(s: &ParamStore, p: &BackboneParams, cfg: &BackboneConfig, input: &BackboneInput) -> M {
    let v = |id| to_m(s.get(id));
    let x = affine(&to_m(input.features), &v(p.input_w), &v(p.input_b));
    let mut x = rope(&x, input.table_index, cfg.rope_base);
    for (l, (rev, fwd)) in p.blocks.iter().enumerate() {
        x = naive_hetero(s, rev, fwd, &x, &input.layers[cfg.layers - 1 - l], input.reversed);
    }
    x.truncate(input.n_out);
    affine(&x, &v(p.output_w), &v(p.output_b))
}

pub fn randomize(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.8..0.8));
    }
}

pub fn random_edges(rng: &mut ChaCha8Rng, n: usize, types: usize, max_edges: usize) -> Vec<SubgraphEdges> {
    (0..types)
        .map(|_| {
            let mut e = SubgraphEdges::default();
            for _ in 0..rng.gen_range(0..=max_edges) {
                let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
                if a != b && !(0..e.len()).any(|k| e.src[k] == a && e.dst[k] == b) {
                    e.src.push(a);
                    e.dst.push(b);
                }
            }
            e
        })
        .collect()
}

pub fn setup(conv: ConvKind, d: usize, layers: usize, in_width: usize, seed: u64) -> (BackboneConfig, ParamStore, BackboneParams) {
    let cfg = BackboneConfig { layers, d, heads: 2, conv, rope_base: 10_000.0 };
    let mut store = ParamStore::new();
    let p = BackboneParams::init(&mut store, "bb.", &cfg, in_width, seed).unwrap();
    randomize(&mut store, seed + 1);
    (cfg, store, p)
}

pub fn close(a: &M, b: &Tensor2, tol: f64) {
    assert_eq!((a.len(), a[0].len()), b.shape());
    for (i, r) in a.iter().enumerate() {
        for (j, x) in r.iter().enumerate() {
            assert!((x - b.get(i, j)).abs() <= tol, "({i},{j}): {x} vs {}", b.get(i, j));
        }
    }
}

/// Exact return probabilities from powers of the admissible transition
/// matrix; halted walks are absorbed outside the graph.
pub fn exact_returns(g: &HeteroGraph, node: usize, at: i64, k: usize) -> Vec<f64> {
    let n = g.num_nodes();
    let mut p = vec![vec![0.0; n]; n];
    for t in 0..g.num_edge_types() {
        for (s, d, time) in g.edges_of(t) {
            if time <= at {
                p[s][d] += 1.0;
            }
        }
    }
    for row in p.iter_mut() {
        let deg: f64 = row.iter().sum();
        if deg > 0.0 {
            row.iter_mut().for_each(|x| *x /= deg);
        }
    }
    let mut dist = vec![0.0; n];
    dist[node] = 1.0;
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut next = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                next[j] += dist[i] * p[i][j];
            }
        }
        dist = next;
        out.push(dist[node]);
    }
    out
}

/// O(n²) count over positive-negative pairs; ties score one half.
pub fn pairwise(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1.0 && labels[j] == 0.0 {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}
