//! Input projection, table-type RoPE, stacked Hetero blocks and the output
//! projection to the representation `h`.

mod block;

pub use block::{hetero_block, smpnn_sub_block, SubBlockParams};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, BoundParams, BoundaryHandle, ParamId, ParamStore, Tape, Tensor2, Var};
use crate::relgraph::{seeds, SubgraphEdges};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    Gcn,
    Gatv2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub layers: usize,
    pub d: usize,
    pub heads: usize,
    pub conv: ConvKind,
    pub rope_base: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { layers: 3, d: 256, heads: 2, conv: ConvKind::Gatv2, rope_base: 10_000.0 }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), AutodiffError> {
        let err = |m: String| Err(AutodiffError::Contract(m));
        if self.layers == 0 {
            return err("backbone needs at least one layer".into());
        }
        if self.d == 0 || self.d % 2 != 0 {
            return err(format!("hidden width {} must be even and positive", self.d));
        }
        if self.conv == ConvKind::Gatv2 && (self.heads == 0 || self.d % self.heads != 0) {
            return err(format!("{} heads do not divide width {}", self.heads, self.d));
        }
        if !(self.rope_base > 0.0) {
            return err("rope base must be positive".into());
        }
        Ok(())
    }
}

/// Parameter ids of one backbone inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct BackboneParams {
    pub input_w: ParamId,
    pub input_b: ParamId,
    /// `(rev, fwd)` per layer.
    pub blocks: Vec<(SubBlockParams, SubBlockParams)>,
    pub output_w: ParamId,
    pub output_b: ParamId,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal) * std)
}

impl BackboneParams {
    /// Adds freshly initialised backbone tensors to `store` under `prefix`.
    /// Weights are N(0, 1/fan_in), biases zero, layer-norm gains one and both
    /// block scales zero.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &BackboneConfig,
        in_width: usize,
        seed: u64,
    ) -> Result<Self, AutodiffError> {
        cfg.validate()?;
        let mut rng = seeds::stream(seed, 0xBAC_B0E);
        let d = cfg.d;
        let fan = |n: usize| 1.0 / (n.max(1) as f64).sqrt();
        let mut add = |name: String, t: Tensor2| store.insert(format!("{prefix}{name}"), t);
        let input_w = add("input.w".into(), gaussian(&mut rng, in_width, d, fan(in_width)));
        let input_b = add("input.b".into(), Tensor2::zeros(1, d));
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let mut make = |dir: &str| {
                let p = |s: &str| format!("layer{l}.{dir}.{s}");
                let attention = match cfg.conv {
                    ConvKind::Gcn => None,
                    ConvKind::Gatv2 => {
                        let dh = d / cfg.heads;
                        Some((
                            add(p("conv.w_dst"), gaussian(&mut rng, d, d, fan(d))),
                            add(p("conv.att"), gaussian(&mut rng, d, cfg.heads, fan(dh))),
                        ))
                    }
                };
                SubBlockParams {
                    ln1_g: add(p("ln1.g"), Tensor2::filled(1, d, 1.0)),
                    ln1_b: add(p("ln1.b"), Tensor2::zeros(1, d)),
                    lin_w: add(p("lin.w"), gaussian(&mut rng, d, d, fan(d))),
                    lin_b: add(p("lin.b"), Tensor2::zeros(1, d)),
                    conv_w: add(p("conv.w"), gaussian(&mut rng, d, d, fan(d))),
                    attention,
                    heads: cfg.heads,
                    scale1: add(p("scale1"), Tensor2::scalar(0.0)),
                    ln2_g: add(p("ln2.g"), Tensor2::filled(1, d, 1.0)),
                    ln2_b: add(p("ln2.b"), Tensor2::zeros(1, d)),
                    ff_w: add(p("ff.w"), gaussian(&mut rng, d, d, fan(d))),
                    ff_b: add(p("ff.b"), Tensor2::zeros(1, d)),
                    scale2: add(p("scale2"), Tensor2::scalar(0.0)),
                }
            };
            let rev = make("rev");
            let fwd = make("fwd");
            blocks.push((rev, fwd));
        }
        let output_w = add("output.w".into(), gaussian(&mut rng, d, d, fan(d)));
        let output_b = add("output.b".into(), Tensor2::zeros(1, d));
        Ok(Self { input_w, input_b, blocks, output_w, output_b })
    }

    /// Resolves the ids of a backbone previously added under `prefix`.
    pub fn lookup(store: &ParamStore, prefix: &str, cfg: &BackboneConfig) -> Result<Self, AutodiffError> {
        let get = |name: String| {
            store
                .id(&format!("{prefix}{name}"))
                .ok_or_else(|| AutodiffError::Checkpoint(format!("missing parameter {prefix}{name}")))
        };
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let sub = |dir: &str| -> Result<SubBlockParams, AutodiffError> {
                let p = |s: &str| format!("layer{l}.{dir}.{s}");
                let attention = match cfg.conv {
                    ConvKind::Gcn => None,
                    ConvKind::Gatv2 => Some((get(p("conv.w_dst"))?, get(p("conv.att"))?)),
                };
                Ok(SubBlockParams {
                    ln1_g: get(p("ln1.g"))?,
                    ln1_b: get(p("ln1.b"))?,
                    lin_w: get(p("lin.w"))?,
                    lin_b: get(p("lin.b"))?,
                    conv_w: get(p("conv.w"))?,
                    attention,
                    heads: cfg.heads,
                    scale1: get(p("scale1"))?,
                    ln2_g: get(p("ln2.g"))?,
                    ln2_b: get(p("ln2.b"))?,
                    ff_w: get(p("ff.w"))?,
                    ff_b: get(p("ff.b"))?,
                    scale2: get(p("scale2"))?,
                })
            };
            blocks.push((sub("rev")?, sub("fwd")?));
        }
        Ok(Self {
            input_w: get("input.w".into())?,
            input_b: get("input.b".into())?,
            blocks,
            output_w: get("output.w".into())?,
            output_b: get("output.b".into())?,
        })
    }
}

/// Affine map of concatenated features to width `d`.
pub fn input_project(tape: &mut Tape, p: &BackboneParams, bound: &BoundParams, features: Var) -> Result<Var, AutodiffError> {
    let w = bound.var(p.input_w);
    let (fw, _) = tape.shape(w);
    let (_, cols) = tape.shape(features);
    if fw != cols {
        return Err(AutodiffError::Dimension(format!("feature width {cols}, input projection expects {fw}")));
    }
    tape.linear(features, w, bound.var(p.input_b))
}

/// Rotates pair `(2i, 2i+1)` of row `r` by `m_r · base^(−2i/d)`.
pub fn rope_table(tape: &mut Tape, x: Var, table_index: &[usize], base: f64) -> Result<Var, AutodiffError> {
    if tape.shape(x).1 % 2 != 0 {
        return Err(AutodiffError::Dimension(format!("rope needs an even width, got {}", tape.shape(x).1)));
    }
    tape.rope(x, table_index.iter().map(|&m| m as f64).collect(), base)
}

/// Everything the forward pass reads from a sampled subgraph.
#[derive(Clone, Copy, Debug)]
pub struct BackboneInput<'a> {
    /// One row per local node.
    pub features: &'a Tensor2,
    /// Table ordinal of each local node.
    pub table_index: &'a [usize],
    /// `layers[ℓ][t]`, ordered outward from the seeds.
    pub layers: &'a [Vec<SubgraphEdges>],
    /// Whether edge type `t` is a reversed twin.
    pub reversed: &'a [bool],
    /// Rows `0..n_out` receive the output projection.
    pub n_out: usize,
}

/// Input projection, RoPE, the Hetero stack (outermost sampled shell first)
/// and the output projection on the first `n_out` rows. The result is
/// registered as the tape's representation boundary.
pub fn backbone_forward(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    p: &BackboneParams,
    bound: &BoundParams,
    input: BackboneInput<'_>,
) -> Result<(Var, BoundaryHandle), AutodiffError> {
    let n = input.features.rows();
    if input.table_index.len() != n {
        return Err(AutodiffError::Dimension(format!("{} table indices for {n} rows", input.table_index.len())));
    }
    if input.layers.len() != cfg.layers {
        return Err(AutodiffError::Contract(format!(
            "{} sampled shells for {} backbone layers",
            input.layers.len(),
            cfg.layers
        )));
    }
    if input.n_out > n {
        return Err(AutodiffError::Dimension(format!("{} output rows of {n}", input.n_out)));
    }
    let f = tape.constant(input.features.clone())?;
    let x0 = input_project(tape, p, bound, f)?;
    let mut x = rope_table(tape, x0, input.table_index, cfg.rope_base)?;
    for (l, (rev, fwd)) in p.blocks.iter().enumerate() {
        let shell = &input.layers[cfg.layers - 1 - l];
        x = hetero_block(tape, bound, rev, fwd, x, shell, input.reversed)?;
    }
    let seeds = if input.n_out == n { x } else { tape.gather_rows(x, (0..input.n_out).collect())? };
    let h = tape.linear(seeds, bound.var(p.output_w), bound.var(p.output_b))?;
    let handle = tape.mark_boundary(h)?;
    Ok((h, handle))
}
