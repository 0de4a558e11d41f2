//! Reverse-mode differentiation over a linear tape.
//!
//! Every primitive pushes one node holding its forward value and enough
//! saved state to compute its vector-Jacobian product. [`Tape::backward`]
//! walks the nodes in reverse creation order, so gradients are exact up to
//! floating point and the traversal order is deterministic.

use std::collections::HashMap;

use rand::Rng;

use super::params::ParamStore;
use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    MeanRows(Var, usize, usize),
    Softmax { input: Var, axis: usize },
    SegmentSoftmax { input: Var, offsets: Vec<usize> },
    LeakyRelu(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Dropout(Var, Vec<f64>),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    BceWithLogits { logits: Var, targets: Vec<f64> },
    WeightedCe { logits: Var, label: usize, weight: f64 },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records one forward computation. Parameters enter through
/// [`Tape::param`], which copies the current value out of a [`ParamStore`]
/// and remembers the binding so [`Gradients::accumulate_into`] can route
/// gradients back.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<usize, Var>,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::dim(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that gradients can be read back from (inputs, constants).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Bind a named parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let idx = store.index_of(name).ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
        if let Some(&v) = self.param_vars.get(&idx) {
            return Ok(v);
        }
        let value = store.by_index(idx).1.value.clone();
        let v = self.push(value, Op::Param);
        self.param_vars.insert(idx, v);
        Ok(v)
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::Transpose(a)))
    }

    fn zip_same(&mut self, name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// Bias add: `a[m,n] + b[n]` broadcast over rows. `b` may be `[n]` or `[1,n]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        if self.value(b).numel() != n {
            return Err(shape_err("add_row", self.shape(a), self.shape(b)));
        }
        let bias = self.value(b).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(bias) {
                *o += bv;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::AddRow(a, b)))
    }

    /// Row scaling: `a[m,n] * w[m,1]`.
    pub fn mul_col(&mut self, a: Var, w: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        if self.value(w).numel() != m {
            return Err(shape_err("mul_col", self.shape(a), self.shape(w)));
        }
        let ws = self.value(w).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            out[i * n..(i + 1) * n].iter_mut().for_each(|o| *o *= ws[i]);
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MulCol(a, w)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * c).collect();
        let t = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(t, Op::Scale(a, c))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols of zero tensors"));
        }
        let m = self.dims2(parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p)?;
            if r != m {
                return Err(shape_err("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = vec![0.0; m * n];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..m {
                out[i * n + off..i * n + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_rows of zero tensors"));
        }
        let n = self.dims2(parts[0])?.1;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (r, c) = self.dims2(p)?;
            if c != n {
                return Err(shape_err("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            out.extend_from_slice(self.value(p).data());
            m += r;
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        if start >= end || end > n {
            return Err(Error::dim(format!("slice_cols {start}..{end} out of range for width {n}")));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        Ok(self.push(Tensor::from_parts(vec![m, w], out), Op::SliceCols(a, start)))
    }

    /// Select rows by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        if idx.is_empty() {
            return Err(Error::contract("gather_rows with no indices"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::dim(format!("gather_rows index {bad} out of range for {m} rows")));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        Ok(self.push(Tensor::from_parts(vec![idx.len(), n], out), Op::GatherRows(a, idx.to_vec())))
    }

    /// `out[targets[e]] += a[e]`, producing `n_out` rows.
    pub fn scatter_add_rows(&mut self, a: Var, targets: &[usize], n_out: usize) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        if targets.len() != m {
            return Err(Error::dim(format!("scatter_add_rows: {} targets for {m} rows", targets.len())));
        }
        if n_out == 0 || targets.iter().any(|&t| t >= n_out) {
            return Err(Error::dim("scatter_add_rows target out of range"));
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; n_out * n];
        for (e, &t) in targets.iter().enumerate() {
            for (o, &s) in out[t * n..(t + 1) * n].iter_mut().zip(&src[e * n..(e + 1) * n]) {
                *o += s;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n_out, n], out), Op::ScatterAddRows(a, targets.to_vec())))
    }

    /// Mean of rows `start..end`, as a `[1, n]` row.
    pub fn mean_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        if start >= end || end > m {
            return Err(Error::dim(format!("mean_rows {start}..{end} out of range for {m} rows")));
        }
        let src = self.value(a).data();
        let inv = 1.0 / (end - start) as f64;
        let mut out = vec![0.0; n];
        for i in start..end {
            for (o, &s) in out.iter_mut().zip(&src[i * n..(i + 1) * n]) {
                *o += s;
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(self.push(Tensor::from_parts(vec![1, n], out), Op::MeanRows(a, start, end)))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.rank() {
            return Err(Error::dim(format!("softmax axis {axis} invalid for shape {:?}", t.shape())));
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let mut out = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * len * inner + k * inner + i;
                let max = (0..len).map(|k| out[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for k in 0..len {
                    let e = (out[at(k)] - max).exp();
                    out[at(k)] = e;
                    sum += e;
                }
                for k in 0..len {
                    out[at(k)] /= sum;
                }
            }
        }
        let t = Tensor::from_parts(t.shape().to_vec(), out);
        Ok(self.push(t, Op::Softmax { input: a, axis }))
    }

    /// Softmax over contiguous groups of a flat tensor; group `g` covers
    /// `offsets[g]..offsets[g + 1]`.
    pub fn segment_softmax(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let total = t.numel();
        if offsets.len() < 2 || offsets[0] != 0 || *offsets.last().unwrap() != total {
            return Err(Error::dim("segment_softmax offsets must span the input"));
        }
        if offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract("segment_softmax over an empty segment"));
        }
        let mut out = t.data().to_vec();
        for w in offsets.windows(2) {
            let seg = &mut out[w[0]..w[1]];
            let max = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in seg.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            seg.iter_mut().for_each(|v| *v /= sum);
        }
        let t = Tensor::from_parts(t.shape().to_vec(), out);
        Ok(self.push(t, Op::SegmentSoftmax { input: a, offsets: offsets.to_vec() }))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(t, op)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, |x| if x >= 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    /// Inverted dropout. In eval mode (`train == false`) or with `p == 0`
    /// this returns `a` itself, no node is recorded.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout probability {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).numel();
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        Ok(self.dropout_with_mask(a, mask))
    }

    pub(crate) fn dropout_with_mask(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let t = self.value(a);
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(t, Op::Dropout(a, mask))
    }

    /// Per-row layer normalization with learnable gain and bias over the
    /// feature (column) axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(t, Op::LayerNorm { x, gain, bias, xhat, inv_std }))
    }

    /// Mean binary cross-entropy between logits and `targets` in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(logits);
        if t.numel() != targets.len() {
            return Err(Error::dim(format!("bce_with_logits: {} logits vs {} targets", t.numel(), targets.len())));
        }
        let loss = t.data().iter().zip(targets).map(|(&x, &y)| bce_logit(x, y)).sum::<f64>() / targets.len() as f64;
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { logits, targets: targets.to_vec() }))
    }

    /// `weight * -log softmax(logits)[label]` for a single row of logits.
    pub fn weighted_cross_entropy(&mut self, logits: Var, label: usize, weight: f64) -> Result<Var> {
        let t = self.value(logits);
        let c = t.numel();
        if label >= c {
            return Err(Error::contract(format!("label {label} out of range for {c} classes")));
        }
        let x = t.data();
        let loss = weight * (log_sum_exp(x) - x[label]);
        Ok(self.push(Tensor::scalar(loss), Op::WeightedCe { logits, label, weight }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Propagate from a scalar output back to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).numel() != 1 {
            return Err(Error::contract(format!("backward needs a scalar output, got shape {:?}", self.shape(output))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let val = |v: Var| self.nodes[v.0].value.data();
        let shape = |v: Var| self.nodes[v.0].value.shape();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = (shape(*a)[0], shape(*a)[1]);
                let n = shape(*b)[1];
                matmul_nt_acc(g, val(*b), slot(grads, *a, m * k), m, k, n);
                matmul_tn_acc(val(*a), g, slot(grads, *b, k * n), m, k, n);
            }
            Op::Transpose(a) => {
                let (m, n) = (shape(*a)[0], shape(*a)[1]);
                let ga = slot(grads, *a, m * n);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            }
            Op::Add(a, b) => {
                axpy(slot(grads, *a, g.len()), g, 1.0);
                axpy(slot(grads, *b, g.len()), g, 1.0);
            }
            Op::Sub(a, b) => {
                axpy(slot(grads, *a, g.len()), g, 1.0);
                axpy(slot(grads, *b, g.len()), g, -1.0);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                for (o, (gi, y)) in slot(grads, *a, g.len()).iter_mut().zip(g.iter().zip(vb)) {
                    *o += gi * y;
                }
                for (o, (gi, x)) in slot(grads, *b, g.len()).iter_mut().zip(g.iter().zip(va)) {
                    *o += gi * x;
                }
            }
            Op::AddRow(a, b) => {
                let n = val(*b).len();
                axpy(slot(grads, *a, g.len()), g, 1.0);
                let gb = slot(grads, *b, n);
                for row in g.chunks(n) {
                    axpy(gb, row, 1.0);
                }
            }
            Op::MulCol(a, w) => {
                let m = val(*w).len();
                let n = g.len() / m;
                let (va, vw) = (val(*a), val(*w));
                let ga = slot(grads, *a, g.len());
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[i * n + j] * vw[i];
                    }
                }
                let gw = slot(grads, *w, m);
                for i in 0..m {
                    gw[i] += (0..n).map(|j| g[i * n + j] * va[i * n + j]).sum::<f64>();
                }
            }
            Op::Scale(a, c) => axpy(slot(grads, *a, g.len()), g, *c),
            Op::ConcatCols(parts) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let mut off = 0;
                for &p in parts {
                    let w = shape(p)[1];
                    let gp = slot(grads, p, m * w);
                    for i in 0..m {
                        axpy(&mut gp[i * w..(i + 1) * w], &g[i * n + off..i * n + off + w], 1.0);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).len();
                    axpy(slot(grads, p, len), &g[off..off + len], 1.0);
                    off += len;
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = (shape(*a)[0], shape(*a)[1]);
                let w = node.value.shape()[1];
                let ga = slot(grads, *a, m * n);
                for i in 0..m {
                    axpy(&mut ga[i * n + start..i * n + start + w], &g[i * w..(i + 1) * w], 1.0);
                }
            }
            Op::GatherRows(a, idx) => {
                let n = shape(*a)[1];
                let ga = slot(grads, *a, val(*a).len());
                for (r, &i) in idx.iter().enumerate() {
                    axpy(&mut ga[i * n..(i + 1) * n], &g[r * n..(r + 1) * n], 1.0);
                }
            }
            Op::ScatterAddRows(a, targets) => {
                let n = shape(*a)[1];
                let ga = slot(grads, *a, val(*a).len());
                for (e, &t) in targets.iter().enumerate() {
                    axpy(&mut ga[e * n..(e + 1) * n], &g[t * n..(t + 1) * n], 1.0);
                }
            }
            Op::MeanRows(a, start, end) => {
                let n = shape(*a)[1];
                let inv = 1.0 / (end - start) as f64;
                let ga = slot(grads, *a, val(*a).len());
                for i in *start..*end {
                    axpy(&mut ga[i * n..(i + 1) * n], g, inv);
                }
            }
            Op::Softmax { input, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let ga = slot(grads, *input, y.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        let dot: f64 = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            ga[at(k)] += y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
            }
            Op::SegmentSoftmax { input, offsets } => {
                let y = node.value.data();
                let ga = slot(grads, *input, y.len());
                for w in offsets.windows(2) {
                    let r = w[0]..w[1];
                    let dot: f64 = r.clone().map(|k| g[k] * y[k]).sum();
                    for k in r {
                        ga[k] += y[k] * (g[k] - dot);
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = val(*a);
                for (o, (gi, xi)) in slot(grads, *a, g.len()).iter_mut().zip(g.iter().zip(x)) {
                    *o += if *xi > 0.0 { *gi } else { slope * gi };
                }
            }
            Op::Relu(a) => {
                let x = val(*a);
                for (o, (gi, xi)) in slot(grads, *a, g.len()).iter_mut().zip(g.iter().zip(x)) {
                    if *xi > 0.0 {
                        *o += gi;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                for (o, (gi, yi)) in slot(grads, *a, g.len()).iter_mut().zip(g.iter().zip(y)) {
                    *o += gi * yi * (1.0 - yi);
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                for (o, (gi, yi)) in slot(grads, *a, g.len()).iter_mut().zip(g.iter().zip(y)) {
                    *o += gi * (1.0 - yi * yi);
                }
            }
            Op::Dropout(a, mask) => {
                for (o, (gi, mi)) in slot(grads, *a, g.len()).iter_mut().zip(g.iter().zip(mask)) {
                    *o += gi * mi;
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let n = val(*gain).len();
                let m = inv_std.len();
                let gv = val(*gain);
                {
                    let gg = slot(grads, *gain, n);
                    for i in 0..m {
                        for j in 0..n {
                            gg[j] += g[i * n + j] * xhat[i * n + j];
                        }
                    }
                }
                {
                    let gb = slot(grads, *bias, n);
                    for row in g.chunks(n) {
                        axpy(gb, row, 1.0);
                    }
                }
                let gx = slot(grads, *x, m * n);
                for i in 0..m {
                    let dxhat: Vec<f64> = (0..n).map(|j| g[i * n + j] * gv[j]).collect();
                    let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dx = (0..n).map(|j| dxhat[j] * xhat[i * n + j]).sum::<f64>() / n as f64;
                    for j in 0..n {
                        gx[i * n + j] += inv_std[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let x = val(*logits);
                let scale = g[0] / targets.len() as f64;
                let gl = slot(grads, *logits, x.len());
                for (o, (xi, ti)) in gl.iter_mut().zip(x.iter().zip(targets)) {
                    *o += scale * (sigmoid(*xi) - ti);
                }
            }
            Op::WeightedCe { logits, label, weight } => {
                let x = val(*logits);
                let lse = log_sum_exp(x);
                let gl = slot(grads, *logits, x.len());
                for (k, (o, xi)) in gl.iter_mut().zip(x).enumerate() {
                    let p = (xi - lse).exp();
                    let onehot = if k == *label { 1.0 } else { 0.0 };
                    *o += g[0] * weight * (p - onehot);
                }
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                slot(grads, *a, n).iter_mut().for_each(|o| *o += g[0]);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `BCE(sigmoid(x), y)`.
pub fn bce_logit(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (1.0 + (-x.abs()).exp()).ln()
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Gradients from one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when `v` does not influence
    /// the output.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Add the gradients of every bound parameter into the store's buffers.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) {
        for (&idx, &var) in &tape.param_vars {
            if let Some(g) = self.get(var) {
                let (_, p) = store.by_index_mut(idx);
                axpy(&mut p.grad, g, 1.0);
            }
        }
    }
}
