use std::rc::Rc;

use super::tensor::{axpy, dot};
use super::{AutodiffError, Tensor2};

/// Layer-norm variance floor.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// How `scatter_rows` combines rows landing on the same destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

/// Primitive kinds, with the inputs and cached quantities each backward
/// rule needs.
#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Rc<[f64]>),
    Silu(Var),
    Sigmoid(Var),
    Log(Var),
    Neg(Var),
    Clamp(Var, f64, f64),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor2, inv_std: Vec<f64> },
    SoftmaxRows(Var),
    SegmentSoftmax { x: Var, segments: Rc<[usize]>, n_segments: usize },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows(Var, Rc<[usize]>),
    ScatterRows { x: Var, index: Rc<[usize]>, counts: Option<Vec<usize>> },
    Rope { x: Var, positions: Rc<[f64]>, base: f64 },
    SumAll(Var),
    BceWithLogits(Var, Rc<[f64]>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor2,
    requires_grad: bool,
}

/// The representation tensor whose gradient is intercepted between the two
/// halves of a backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryHandle {
    var: Var,
    rows: usize,
    cols: usize,
}

impl BoundaryHandle {
    pub fn var(&self) -> Var {
        self.var
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Gradients of the requires-grad leaves after a (partial) sweep.
#[derive(Clone, Debug, Default)]
pub struct GradientMap {
    entries: Vec<(Var, Tensor2)>,
}

impl GradientMap {
    /// Gradient for `v`, or `None` when `v` is not a trainable leaf.
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        self.entries.binary_search_by_key(&v, |(k, _)| *k).ok().map(|i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor2)> {
        self.entries.iter().map(|(v, t)| (*v, t))
    }
}

struct Sweep {
    grads: Vec<Option<Tensor2>>,
    captured: Tensor2,
    resumed: bool,
}

/// Reverse-mode tape over [`Tensor2`] values.
///
/// Nodes are appended in evaluation order, so ids increase along every path
/// and the reverse sweep is a single pass from the loss down to id 0. One
/// node may be marked as the representation boundary: `backward_from` then
/// stops there and hands back the captured gradient, and `resume_backward`
/// continues the sweep from an externally supplied gradient.
pub struct Tape {
    nodes: Vec<Node>,
    checked: bool,
    boundary: Option<BoundaryHandle>,
    sweep: Option<Sweep>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape in checked mode: every recorded value is scanned for NaN/Inf.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), checked: true, boundary: None, sweep: None }
    }

    pub fn unchecked() -> Self {
        Self { checked: false, ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor2) -> Result<Var, AutodiffError> {
        self.push(Op::Leaf, value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor2) -> Result<Var, AutodiffError> {
        self.push(Op::Leaf, value, false)
    }

    fn push(&mut self, op: Op, value: Tensor2, requires_grad: bool) -> Result<Var, AutodiffError> {
        if self.checked && !value.is_finite() {
            return Err(AutodiffError::Numeric(format!(
                "non-finite output from {}",
                op_name(&op)
            )));
        }
        self.nodes.push(Node { op, value, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dim_err(what: &str, a: (usize, usize), b: (usize, usize)) -> AutodiffError {
        AutodiffError::Dimension(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
    }

    // ---- primitives -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Self::dim_err("matmul", sa, sb));
        }
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), value, rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(Op::Transpose(a), value, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Self::dim_err("add", sa, sb));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add(a, b), value, rg)
    }

    /// `a + 1·row`, broadcasting a `1 × c` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(Self::dim_err("add_row", sa, sr));
        }
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..sa.0 {
            for (x, b) in value.row_mut(i).iter_mut().zip(&r) {
                *x += *b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(Op::AddRow(a, row), value, rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Self::dim_err("mul", sa, sb));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Mul(a, b), Tensor2::from_vec(sa.0, sa.1, data), rg)
    }

    /// Multiplies row `i` of `a` by the scalar `col[i]` (`col` is `n × 1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, AutodiffError> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc.1 != 1 || sc.0 != sa.0 {
            return Err(Self::dim_err("mul_col", sa, sc));
        }
        let mut value = self.value(a).clone();
        let c = self.value(col).data().to_vec();
        for (i, ci) in c.iter().enumerate() {
            value.row_mut(i).iter_mut().for_each(|x| *x *= ci);
        }
        let rg = self.rg(a) || self.rg(col);
        self.push(Op::MulCol(a, col), value, rg)
    }

    /// Multiplies every entry of `a` by the `1 × 1` tensor `s` (learned scale).
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        let ss = self.shape(s);
        if ss != (1, 1) {
            return Err(Self::dim_err("scale_by expects a 1x1 scale", self.shape(a), ss));
        }
        let c = self.value(s).item();
        let value = self.value(a).scaled(c);
        let rg = self.rg(a) || self.rg(s);
        self.push(Op::ScaleBy(a, s), value, rg)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        let value = self.value(a).scaled(c);
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), value, rg)
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Vec<f64>) -> Result<Var, AutodiffError> {
        let sa = self.shape(a);
        if factors.len() != sa.0 {
            return Err(Self::dim_err("scale_rows", sa, (factors.len(), 1)));
        }
        let mut value = self.value(a).clone();
        for (i, f) in factors.iter().enumerate() {
            value.row_mut(i).iter_mut().for_each(|x| *x *= f);
        }
        let rg = self.rg(a);
        self.push(Op::ScaleRows(a, factors.into()), value, rg)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.rg(a);
        self.push(Op::Silu(a), value, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(Op::Sigmoid(a), value, rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(Op::Log(a), value, rg)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(|x| -x);
        let rg = self.rg(a);
        self.push(Op::Neg(a), value, rg)
    }

    /// Clamps into `[lo, hi]`; the gradient passes only where the input is
    /// inside the closed interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(Op::Clamp(a, lo, hi), value, rg)
    }

    /// Per-row layer norm with learned affine `gain`, `bias` (both `1 × c`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (sx, sg, sb) = (self.shape(x), self.shape(gain), self.shape(bias));
        if sg != (1, sx.1) || sb != (1, sx.1) {
            return Err(Self::dim_err("layer_norm affine", sx, sg));
        }
        let (n, c) = sx;
        let xv = self.value(x);
        let mut xhat = Tensor2::zeros(n, c);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut value = xhat.clone();
        for i in 0..n {
            for ((o, gj), bj) in value.row_mut(i).iter_mut().zip(g).zip(b) {
                *o = *o * gj + bj;
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(Op::LayerNorm { x, gain, bias, xhat, inv_std }, value, rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            softmax_in_place(value.row_mut(i));
        }
        let rg = self.rg(a);
        self.push(Op::SoftmaxRows(a), value, rg)
    }

    /// Softmax over groups of rows: row `e` belongs to group `segments[e]`,
    /// and each column is normalised independently within each group.
    pub fn segment_softmax(
        &mut self,
        a: Var,
        segments: Vec<usize>,
        n_segments: usize,
    ) -> Result<Var, AutodiffError> {
        let sa = self.shape(a);
        if segments.len() != sa.0 {
            return Err(Self::dim_err("segment_softmax", sa, (segments.len(), 1)));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= n_segments) {
            return Err(AutodiffError::Dimension(format!(
                "segment id {bad} out of range for {n_segments} segments"
            )));
        }
        let c = sa.1;
        let src = self.value(a);
        let mut max = vec![f64::NEG_INFINITY; n_segments * c];
        for (e, &s) in segments.iter().enumerate() {
            for (j, &v) in src.row(e).iter().enumerate() {
                let m = &mut max[s * c + j];
                if v > *m {
                    *m = v;
                }
            }
        }
        let mut value = Tensor2::zeros(sa.0, c);
        let mut denom = vec![0.0; n_segments * c];
        for (e, &s) in segments.iter().enumerate() {
            for j in 0..c {
                let ex = (src.get(e, j) - max[s * c + j]).exp();
                value.set(e, j, ex);
                denom[s * c + j] += ex;
            }
        }
        for (e, &s) in segments.iter().enumerate() {
            for j in 0..c {
                let v = value.get(e, j) / denom[s * c + j];
                value.set(e, j, v);
            }
        }
        let rg = self.rg(a);
        self.push(Op::SegmentSoftmax { x: a, segments: segments.into(), n_segments }, value, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(Self::dim_err("concat_cols", (rows, 0), self.shape(p)));
            }
        }
        let refs: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor2::concat_cols(&refs);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::ConcatCols(parts.to_vec()), value, rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let sa = self.shape(a);
        if start + len > sa.1 {
            return Err(Self::dim_err("slice_cols", sa, (start, len)));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(sa.0 * len);
        for i in 0..sa.0 {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let rg = self.rg(a);
        self.push(Op::SliceCols { x: a, start }, Tensor2::from_vec(sa.0, len, data), rg)
    }

    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Result<Var, AutodiffError> {
        let sa = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= sa.0) {
            return Err(AutodiffError::Dimension(format!(
                "gather_rows index {bad} out of range for {} rows",
                sa.0
            )));
        }
        let value = self.value(a).gather_rows(&index);
        let rg = self.rg(a);
        self.push(Op::GatherRows(a, index.into()), value, rg)
    }

    /// Row `i` of `a` is added into output row `index[i]`; with
    /// [`Reduce::Mean`] each output row is divided by the number of rows that
    /// landed on it. Output rows that receive nothing are zero.
    pub fn scatter_rows(
        &mut self,
        a: Var,
        index: Vec<usize>,
        n_out: usize,
        reduce: Reduce,
    ) -> Result<Var, AutodiffError> {
        let sa = self.shape(a);
        if index.len() != sa.0 {
            return Err(Self::dim_err("scatter_rows", sa, (index.len(), 1)));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n_out) {
            return Err(AutodiffError::Dimension(format!(
                "scatter_rows target {bad} out of range for {n_out} rows"
            )));
        }
        let src = self.value(a);
        let mut value = Tensor2::zeros(n_out, sa.1);
        for (i, &t) in index.iter().enumerate() {
            axpy(1.0, src.row(i), value.row_mut(t));
        }
        let counts = match reduce {
            Reduce::Sum => None,
            Reduce::Mean => {
                let mut counts = vec![0usize; n_out];
                for &t in &index {
                    counts[t] += 1;
                }
                for (t, &k) in counts.iter().enumerate() {
                    if k > 1 {
                        let inv = 1.0 / k as f64;
                        value.row_mut(t).iter_mut().for_each(|x| *x *= inv);
                    }
                }
                Some(counts)
            }
        };
        let rg = self.rg(a);
        self.push(Op::ScatterRows { x: a, index: index.into(), counts }, value, rg)
    }

    /// Rotary embedding: the dimension pair `(2i, 2i+1)` of row `r` is rotated
    /// by `positions[r] · base^(-2i/d)`.
    pub fn rope(&mut self, a: Var, positions: Vec<f64>, base: f64) -> Result<Var, AutodiffError> {
        let sa = self.shape(a);
        if sa.1 % 2 != 0 {
            return Err(AutodiffError::Dimension(format!("rope needs an even width, got {}", sa.1)));
        }
        if positions.len() != sa.0 {
            return Err(Self::dim_err("rope positions", sa, (positions.len(), 1)));
        }
        let mut value = self.value(a).clone();
        rope_rotate(&mut value, &positions, base, 1.0);
        let rg = self.rg(a);
        self.push(Op::Rope { x: a, positions: positions.into(), base }, value, rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = Tensor2::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::SumAll(a), value, rg)
    }

    /// Mean of all entries, as `sum_all` followed by a constant scale.
    pub fn mean_all(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Per-row sigmoid cross-entropy of an `n × 1` logit column against
    /// labels in `{0, 1}`; output is `n × 1`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: Vec<f64>) -> Result<Var, AutodiffError> {
        let sl = self.shape(logits);
        if sl.1 != 1 || labels.len() != sl.0 {
            return Err(Self::dim_err("bce_with_logits", sl, (labels.len(), 1)));
        }
        let z = self.value(logits).data();
        let data = z
            .iter()
            .zip(&labels)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .collect();
        let rg = self.rg(logits);
        self.push(Op::BceWithLogits(logits, labels.into()), Tensor2::from_vec(sl.0, 1, data), rg)
    }

    /// Affine map `x·w + b` (`b` is a `1 × out` row).
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    // ---- boundary and backward -------------------------------------------

    /// Marks `v` as the representation boundary. At most one per tape.
    pub fn mark_boundary(&mut self, v: Var) -> Result<BoundaryHandle, AutodiffError> {
        if self.boundary.is_some() {
            return Err(AutodiffError::Contract("tape already has a boundary".into()));
        }
        let (rows, cols) = self.shape(v);
        let handle = BoundaryHandle { var: v, rows, cols };
        self.boundary = Some(handle);
        Ok(handle)
    }

    pub fn boundary(&self) -> Option<BoundaryHandle> {
        self.boundary
    }

    /// Reverse sweep from a scalar loss, seeded with `seed`.
    ///
    /// Without a boundary this is an ordinary full backward pass. With one,
    /// the sweep covers only nodes recorded after the boundary; the boundary
    /// gradient is captured (see [`Tape::boundary_grad`]) and nothing below it
    /// receives gradient until [`Tape::resume_backward`] is called.
    pub fn backward_from(&mut self, loss: Var, seed: f64) -> Result<GradientMap, AutodiffError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AutodiffError::Contract(format!(
                "loss must be a scalar, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor2::scalar(seed));
        match self.boundary {
            Some(b) if b.var.0 < loss.0 => {
                self.sweep_range(&mut grads, b.var.0 + 1, loss.0);
                let captured = grads[b.var.0].take().unwrap_or_else(|| Tensor2::zeros(b.rows, b.cols));
                let map = self.leaf_grads(&grads);
                self.sweep = Some(Sweep { grads, captured, resumed: false });
                Ok(map)
            }
            _ => {
                self.sweep_range(&mut grads, 0, loss.0);
                let map = self.leaf_grads(&grads);
                self.sweep = None;
                Ok(map)
            }
        }
    }

    /// Gradient captured at the boundary by the last `backward_from`.
    pub fn boundary_grad(&self) -> Result<&Tensor2, AutodiffError> {
        self.sweep
            .as_ref()
            .map(|s| &s.captured)
            .ok_or_else(|| AutodiffError::Contract("no boundary gradient captured yet".into()))
    }

    /// Continues the sweep below the boundary using `injected` as the
    /// upstream gradient of the boundary tensor. Returns gradients of all
    /// trainable leaves (those above the boundary included).
    pub fn resume_backward(
        &mut self,
        boundary: &BoundaryHandle,
        injected: &Tensor2,
    ) -> Result<GradientMap, AutodiffError> {
        if self.boundary != Some(*boundary) {
            return Err(AutodiffError::Contract("handle does not belong to this tape".into()));
        }
        if injected.shape() != boundary.shape() {
            return Err(Self::dim_err("injected gradient", injected.shape(), boundary.shape()));
        }
        let mut sweep = self
            .sweep
            .take()
            .ok_or_else(|| AutodiffError::Contract("resume_backward called before backward_from".into()))?;
        if sweep.resumed {
            self.sweep = Some(sweep);
            return Err(AutodiffError::Contract("boundary already resumed".into()));
        }
        sweep.grads[boundary.var.0] = Some(injected.clone());
        self.sweep_range(&mut sweep.grads, 0, boundary.var.0);
        let map = self.leaf_grads(&sweep.grads);
        sweep.resumed = true;
        self.sweep = Some(sweep);
        Ok(map)
    }

    fn leaf_grads(&self, grads: &[Option<Tensor2>]) -> GradientMap {
        let entries = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.requires_grad && matches!(n.op, Op::Leaf))
            .map(|(i, n)| {
                let g = grads[i].clone().unwrap_or_else(|| Tensor2::zeros(n.value.rows(), n.value.cols()));
                (Var(i), g)
            })
            .collect();
        GradientMap { entries }
    }

    /// Applies backward rules for nodes `hi` down to `lo`, inclusive.
    fn sweep_range(&self, grads: &mut [Option<Tensor2>], lo: usize, hi: usize) {
        for id in (lo..=hi).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(id, &g, grads);
            grads[id] = Some(g);
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor2>], v: Var, contribution: Tensor2) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn backward_node(&self, id: usize, g: &Tensor2, grads: &mut [Option<Tensor2>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(self.value(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a).matmul_tn(g));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*row) {
                    let mut s = vec![0.0; g.cols()];
                    for i in 0..g.rows() {
                        axpy(1.0, g.row(i), &mut s);
                    }
                    self.accumulate(grads, *row, Tensor2::row_vector(s));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = g.data().iter().zip(vb.data()).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, Tensor2::from_vec(g.rows(), g.cols(), d));
                }
                if self.rg(*b) {
                    let d = g.data().iter().zip(va.data()).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, Tensor2::from_vec(g.rows(), g.cols(), d));
                }
            }
            Op::MulCol(a, col) => {
                let (va, vc) = (self.value(*a), self.value(*col));
                if self.rg(*a) {
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        let c = vc.data()[i];
                        d.row_mut(i).iter_mut().for_each(|x| *x *= c);
                    }
                    self.accumulate(grads, *a, d);
                }
                if self.rg(*col) {
                    let d = (0..g.rows()).map(|i| dot(g.row(i), va.row(i))).collect();
                    self.accumulate(grads, *col, Tensor2::column(d));
                }
            }
            Op::ScaleBy(a, s) => {
                let c = self.value(*s).item();
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.scaled(c));
                }
                if self.rg(*s) {
                    let d = dot(g.data(), self.value(*a).data());
                    self.accumulate(grads, *s, Tensor2::scalar(d));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scaled(*c)),
            Op::ScaleRows(a, f) => {
                let mut d = g.clone();
                for (i, fi) in f.iter().enumerate() {
                    d.row_mut(i).iter_mut().for_each(|x| *x *= fi);
                }
                self.accumulate(grads, *a, d);
            }
            Op::Silu(a) => {
                let x = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(g, &x)| {
                        let s = sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                self.accumulate(grads, *a, Tensor2::from_vec(g.rows(), g.cols(), d));
            }
            Op::Sigmoid(a) => {
                let d = g.data().iter().zip(out.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, *a, Tensor2::from_vec(g.rows(), g.cols(), d));
            }
            Op::Log(a) => {
                let x = self.value(*a);
                let d = g.data().iter().zip(x.data()).map(|(g, x)| g / x).collect();
                self.accumulate(grads, *a, Tensor2::from_vec(g.rows(), g.cols(), d));
            }
            Op::Neg(a) => self.accumulate(grads, *a, g.scaled(-1.0)),
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(g, x)| if *x >= *lo && *x <= *hi { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Tensor2::from_vec(g.rows(), g.cols(), d));
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (n, c) = g.shape();
                let gv = self.value(*gain).data();
                if self.rg(*gain) {
                    let mut dg = vec![0.0; c];
                    for i in 0..n {
                        for ((d, gi), xh) in dg.iter_mut().zip(g.row(i)).zip(xhat.row(i)) {
                            *d += gi * xh;
                        }
                    }
                    self.accumulate(grads, *gain, Tensor2::row_vector(dg));
                }
                if self.rg(*bias) {
                    let mut db = vec![0.0; c];
                    for i in 0..n {
                        axpy(1.0, g.row(i), &mut db);
                    }
                    self.accumulate(grads, *bias, Tensor2::row_vector(db));
                }
                if self.rg(*x) {
                    let mut dx = Tensor2::zeros(n, c);
                    let cf = c as f64;
                    for i in 0..n {
                        let dxhat: Vec<f64> = g.row(i).iter().zip(gv).map(|(a, b)| a * b).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dot(&dxhat, xhat.row(i));
                        let inv = inv_std[i];
                        for ((o, d), xh) in dx.row_mut(i).iter_mut().zip(&dxhat).zip(xhat.row(i)) {
                            *o = inv / cf * (cf * d - sum_d - xh * sum_dx);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::SoftmaxRows(a) => {
                let mut d = Tensor2::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let y = out.row(i);
                    let s = dot(g.row(i), y);
                    for ((o, gi), yi) in d.row_mut(i).iter_mut().zip(g.row(i)).zip(y) {
                        *o = yi * (gi - s);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::SegmentSoftmax { x, segments, n_segments } => {
                let c = g.cols();
                let mut s = vec![0.0; n_segments * c];
                for (e, &seg) in segments.iter().enumerate() {
                    for j in 0..c {
                        s[seg * c + j] += g.get(e, j) * out.get(e, j);
                    }
                }
                let mut d = Tensor2::zeros(g.rows(), c);
                for (e, &seg) in segments.iter().enumerate() {
                    for j in 0..c {
                        d.set(e, j, out.get(e, j) * (g.get(e, j) - s[seg * c + j]));
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(g.rows() * w);
                        for i in 0..g.rows() {
                            d.extend_from_slice(&g.row(i)[start..start + w]);
                        }
                        self.accumulate(grads, p, Tensor2::from_vec(g.rows(), w, d));
                    }
                    start += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (n, w) = self.shape(*x);
                let mut d = Tensor2::zeros(n, w);
                for i in 0..n {
                    d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *x, d);
            }
            Op::GatherRows(a, index) => {
                let (n, c) = self.shape(*a);
                let mut d = Tensor2::zeros(n, c);
                for (i, &src) in index.iter().enumerate() {
                    axpy(1.0, g.row(i), d.row_mut(src));
                }
                self.accumulate(grads, *a, d);
            }
            Op::ScatterRows { x, index, counts } => {
                let (n, c) = self.shape(*x);
                let mut d = Tensor2::zeros(n, c);
                for (i, &t) in index.iter().enumerate() {
                    let w = counts.as_ref().map_or(1.0, |k| 1.0 / k[t] as f64);
                    axpy(w, g.row(t), d.row_mut(i));
                }
                self.accumulate(grads, *x, d);
            }
            Op::Rope { x, positions, base } => {
                let mut d = g.clone();
                rope_rotate(&mut d, positions, *base, -1.0);
                self.accumulate(grads, *x, d);
            }
            Op::SumAll(a) => {
                let (n, c) = self.shape(*a);
                self.accumulate(grads, *a, Tensor2::filled(n, c, g.item()));
            }
            Op::BceWithLogits(z, labels) => {
                let zv = self.value(*z);
                let d = g
                    .data()
                    .iter()
                    .zip(zv.data())
                    .zip(labels.iter())
                    .map(|((g, &z), y)| g * (sigmoid(z) - y))
                    .collect();
                self.accumulate(grads, *z, Tensor2::from_vec(g.rows(), 1, d));
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Transpose(..) => "transpose",
        Op::Add(..) => "add",
        Op::AddRow(..) => "add_row",
        Op::Mul(..) => "mul",
        Op::MulCol(..) => "mul_col",
        Op::ScaleBy(..) => "scale_by",
        Op::Scale(..) => "scale",
        Op::ScaleRows(..) => "scale_rows",
        Op::Silu(..) => "silu",
        Op::Sigmoid(..) => "sigmoid",
        Op::Log(..) => "log",
        Op::Neg(..) => "neg",
        Op::Clamp(..) => "clamp",
        Op::LayerNorm { .. } => "layer_norm",
        Op::SoftmaxRows(..) => "softmax_rows",
        Op::SegmentSoftmax { .. } => "segment_softmax",
        Op::ConcatCols(..) => "concat_cols",
        Op::SliceCols { .. } => "slice_cols",
        Op::GatherRows(..) => "gather_rows",
        Op::ScatterRows { .. } => "scatter_rows",
        Op::Rope { .. } => "rope",
        Op::SumAll(..) => "sum_all",
        Op::BceWithLogits(..) => "bce_with_logits",
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// Rotates each dimension pair of every row; `sign = -1` applies the inverse.
pub(crate) fn rope_rotate(t: &mut Tensor2, positions: &[f64], base: f64, sign: f64) {
    let d = t.cols();
    let theta: Vec<f64> = (0..d / 2).map(|i| base.powf(-2.0 * i as f64 / d as f64)).collect();
    for (r, &m) in positions.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let row = t.row_mut(r);
        for (i, th) in theta.iter().enumerate() {
            let (s, c) = (sign * m * th).sin_cos();
            let (x0, x1) = (row[2 * i], row[2 * i + 1]);
            row[2 * i] = x0 * c - x1 * s;
            row[2 * i + 1] = x0 * s + x1 * c;
        }
    }
}
