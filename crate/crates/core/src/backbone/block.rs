use std::collections::HashMap;

use crate::autodiff::{AutodiffError, BoundParams, ParamId, Reduce, Tape, Tensor2, Var};
use crate::relgraph::SubgraphEdges;

/// Parameters of one SMPNN sub-block (REV or FWD).
#[derive(Clone, Debug)]
pub struct SubBlockParams {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub lin_w: ParamId,
    pub lin_b: ParamId,
    /// Message projection of the conv.
    pub conv_w: ParamId,
    /// GATv2 destination projection (`d × d`) and per-head attention vectors
    /// stored column-wise (`d × heads`, only the head's slice is used).
    pub attention: Option<(ParamId, ParamId)>,
    pub heads: usize,
    pub scale1: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub ff_w: ParamId,
    pub ff_b: ParamId,
    pub scale2: ParamId,
}

fn check_edges(edges: &SubgraphEdges, n: usize) -> Result<(), AutodiffError> {
    if edges.src.len() != edges.dst.len() {
        return Err(AutodiffError::Dimension("edge list src/dst lengths differ".into()));
    }
    if let Some(&bad) = edges.src.iter().chain(&edges.dst).find(|&&i| i >= n) {
        return Err(AutodiffError::Dimension(format!("edge endpoint {bad} out of range for {n} rows")));
    }
    Ok(())
}

/// Conv over edges `src_r → dst_d`; `u` rows `0..n_dst` are the destinations.
fn conv(
    tape: &mut Tape,
    bound: &BoundParams,
    p: &SubBlockParams,
    u: Var,
    src_r: &[usize],
    dst_d: &[usize],
    n_dst: usize,
) -> Result<Var, AutodiffError> {
    let msg = tape.matmul(u, bound.var(p.conv_w))?;
    let s = tape.gather_rows(msg, src_r.to_vec())?;
    let Some((w_dst, att)) = p.attention else {
        return tape.scatter_rows(s, dst_d.to_vec(), n_dst, Reduce::Mean);
    };
    let d = tape.shape(u).1;
    let heads = p.heads;
    let dh = d / heads;
    let u_dst = if tape.shape(u).0 == n_dst { u } else { tape.gather_rows(u, (0..n_dst).collect())? };
    let r = tape.matmul(u_dst, bound.var(w_dst))?;
    let r = tape.gather_rows(r, dst_d.to_vec())?;
    let z = tape.add(s, r)?;
    let z = tape.silu(z)?;
    let mask = tape.constant(Tensor2::from_fn(d, heads, |i, h| if i / dh == h { 1.0 } else { 0.0 }))?;
    let att = tape.mul(bound.var(att), mask)?;
    let scores = tape.matmul(z, att)?;
    let alpha = tape.segment_softmax(scores, dst_d.to_vec(), n_dst)?;
    let expand = tape.constant(Tensor2::from_fn(heads, d, |h, j| if j / dh == h { 1.0 } else { 0.0 }))?;
    let alpha = tape.matmul(alpha, expand)?;
    let weighted = tape.mul(s, alpha)?;
    tape.scatter_rows(weighted, dst_d.to_vec(), n_dst, Reduce::Sum)
}

/// Sub-block output for the rows `dests` only, reading sources from `x`.
fn sub_block_rows(
    tape: &mut Tape,
    bound: &BoundParams,
    p: &SubBlockParams,
    x: Var,
    edges: &SubgraphEdges,
    dests: &[usize],
) -> Result<Var, AutodiffError> {
    let n = tape.shape(x).0;
    let full = dests.len() == n && dests.iter().enumerate().all(|(i, &r)| i == r);
    let mut rows: Vec<usize> = dests.to_vec();
    let mut pos: HashMap<usize, usize> = dests.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    let dst_d: Vec<usize> = edges.dst.iter().map(|r| pos[r]).collect();
    let src_r: Vec<usize> = edges
        .src
        .iter()
        .map(|&r| {
            *pos.entry(r).or_insert_with(|| {
                rows.push(r);
                rows.len() - 1
            })
        })
        .collect();
    let (x_r, x_d) = if full {
        (x, x)
    } else {
        let x_r = tape.gather_rows(x, rows)?;
        let x_d = tape.gather_rows(x_r, (0..dests.len()).collect())?;
        (x_r, x_d)
    };
    let a = tape.layer_norm(x_r, bound.var(p.ln1_g), bound.var(p.ln1_b))?;
    let u = tape.linear(a, bound.var(p.lin_w), bound.var(p.lin_b))?;
    let c = conv(tape, bound, p, u, &src_r, &dst_d, dests.len())?;
    let c = tape.silu(c)?;
    let branch = tape.scale_by(c, bound.var(p.scale1))?;
    let y = tape.add(x_d, branch)?;
    let b = tape.layer_norm(y, bound.var(p.ln2_g), bound.var(p.ln2_b))?;
    let f = tape.linear(b, bound.var(p.ff_w), bound.var(p.ff_b))?;
    let f = tape.silu(f)?;
    tape.scale_by(f, bound.var(p.scale2))
}

/// LN → linear → conv → SiLU → scale → residual, then LN → linear → SiLU →
/// scale, on every row of `x`.
pub fn smpnn_sub_block(
    tape: &mut Tape,
    bound: &BoundParams,
    p: &SubBlockParams,
    x: Var,
    edges: &SubgraphEdges,
) -> Result<Var, AutodiffError> {
    let n = tape.shape(x).0;
    check_edges(edges, n)?;
    let all: Vec<usize> = (0..n).collect();
    sub_block_rows(tape, bound, p, x, edges, &all)
}

/// `x + A / max(C, 1)` where each edge type adds its sub-block message on
/// its destination rows to `A` and one to `C`. Reversed types use `rev`,
/// original types `fwd`. Messages are only evaluated on destination rows.
pub fn hetero_block(
    tape: &mut Tape,
    bound: &BoundParams,
    rev: &SubBlockParams,
    fwd: &SubBlockParams,
    x: Var,
    edges: &[SubgraphEdges],
    reversed: &[bool],
) -> Result<Var, AutodiffError> {
    let n = tape.shape(x).0;
    if edges.len() > reversed.len() {
        return Err(AutodiffError::Dimension(format!("{} edge types but {} direction flags", edges.len(), reversed.len())));
    }
    let mut counts = vec![0u32; n];
    let mut acc: Option<Var> = None;
    for (t, e) in edges.iter().enumerate() {
        if e.is_empty() {
            continue;
        }
        check_edges(e, n)?;
        let mut seen = vec![false; n];
        let mut dests = Vec::new();
        for &d in &e.dst {
            if !seen[d] {
                seen[d] = true;
                dests.push(d);
                counts[d] += 1;
            }
        }
        let p = if reversed[t] { rev } else { fwd };
        let msg = sub_block_rows(tape, bound, p, x, e, &dests)?;
        let spread = tape.scatter_rows(msg, dests, n, Reduce::Sum)?;
        acc = Some(match acc {
            None => spread,
            Some(a) => tape.add(a, spread)?,
        });
    }
    let Some(acc) = acc else { return Ok(x) };
    let norm = counts.iter().map(|&c| 1.0 / c.max(1) as f64).collect();
    let update = tape.scale_rows(acc, norm)?;
    tape.add(x, update)
}
