//! Reverse-mode tape over dense tensors.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and backward is a single reverse sweep.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;

use super::params::Params;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::simplex::{self, MappingKind};

/// Score written into masked key positions before the mapping is applied.
pub const MASK_FILL: f64 = -1e9;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Attention weights captured during a forward pass.
#[derive(Debug, Clone)]
pub struct AttentionCapture {
    pub tag: String,
    pub heads: usize,
    pub segments: Vec<Range<usize>>,
    /// Per segment: `heads * n * n` weights, head-major then row-major.
    pub weights: Vec<Vec<f64>>,
}

struct AttentionState {
    q: Var,
    k: Var,
    v: Var,
    segments: Vec<Range<usize>>,
    key_mask: Vec<bool>,
    heads: usize,
    mapping: MappingKind,
    probs: Vec<Vec<f64>>,
}

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    AddPositions { x: Var, table: Var, positions: Vec<usize> },
    Embedding { table: Var, ids: Vec<usize> },
    Relu(Var),
    Dropout { x: Var, scale: Vec<f64> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Attention(Box<AttentionState>),
    GroupMean { x: Var, groups: Vec<Vec<usize>> },
    Bce { logits: Var, labels: Vec<f64> },
    Sum(Var),
    WeightedSum { x: Var, weights: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients from one backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    capture: bool,
    captures: Vec<AttentionCapture>,
    min_margin: f64,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            min_margin: f64::INFINITY,
            ..Default::default()
        }
    }

    /// A graph that keeps every attention matrix it computes.
    pub fn with_capture() -> Self {
        Graph {
            capture: true,
            ..Graph::new()
        }
    }

    pub fn captures(&self) -> &[AttentionCapture] {
        &self.captures
    }

    pub fn take_captures(&mut self) -> Vec<AttentionCapture> {
        std::mem::take(&mut self.captures)
    }

    /// Smallest distance between any attention score and its sparse threshold.
    pub fn min_support_margin(&self) -> f64 {
        self.min_margin
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers parameter `name` once per graph.
    pub fn param(&mut self, params: &Params, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let tensor = params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))?
            .clone();
        let v = self.input(tensor);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Gradients of every registered parameter, keyed by name.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .filter_map(|(name, &v)| {
                grads.get(v).map(|g| {
                    let shape = self.value(v).shape().to_vec();
                    (name.clone(), Tensor::new(shape, g.to_vec()).expect("grad matches param"))
                })
            })
            .collect()
    }

    /// `y = x W + b` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x);
        let ws = self.value(w);
        if ws.rank() != 2 || xs.cols() != ws.shape()[0] {
            return Err(Error::Shape {
                op: "linear",
                left: xs.shape().to_vec(),
                right: ws.shape().to_vec(),
            });
        }
        let (rows, inner, out) = (xs.rows(), ws.shape()[0], ws.shape()[1]);
        let mut y = vec![0.0; rows * out];
        if let Some(b) = b {
            let bs = self.value(b);
            if bs.len() != out {
                return Err(Error::Shape {
                    op: "linear bias",
                    left: ws.shape().to_vec(),
                    right: bs.shape().to_vec(),
                });
            }
            for row in y.chunks_mut(out) {
                row.copy_from_slice(bs.data());
            }
        }
        gemm(rows, inner, out, xs.data(), (inner, 1), ws.data(), (out, 1), &mut y, 1.0);
        let mut shape = xs.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = out;
        let value = Tensor::new(shape, y)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Linear { x, w, b }, &inputs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape {
                op: "add",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Adds row `positions[i]` of `table` to row `i` of `x`.
    pub fn add_positions(&mut self, x: Var, table: Var, positions: &[usize]) -> Result<Var> {
        let (xv, tv) = (self.value(x), self.value(table));
        if tv.rank() != 2 || xv.cols() != tv.cols() || xv.rows() != positions.len() {
            return Err(Error::Shape {
                op: "add_positions",
                left: xv.shape().to_vec(),
                right: tv.shape().to_vec(),
            });
        }
        let max = tv.rows();
        if let Some(&p) = positions.iter().find(|&&p| p >= max) {
            return Err(Error::Capacity { len: p + 1, max });
        }
        let d = xv.cols();
        let mut data = xv.data().to_vec();
        for (row, &p) in data.chunks_mut(d).zip(positions) {
            for (o, t) in row.iter_mut().zip(tv.row(p)) {
                *o += t;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let op = Op::AddPositions {
            x,
            table,
            positions: positions.to_vec(),
        };
        Ok(self.push(value, op, &[x, table]))
    }

    /// Gathers table rows; id 0 is padding and always yields a zero row.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(Error::Shape {
                op: "embedding",
                left: tv.shape().to_vec(),
                right: vec![ids.len()],
            });
        }
        if ids.is_empty() {
            return Err(Error::EmptyPool);
        }
        let (size, d) = (tv.rows(), tv.cols());
        if let Some(&id) = ids.iter().find(|&&id| id >= size) {
            return Err(Error::OutOfRange { id, size });
        }
        let mut data = vec![0.0; ids.len() * d];
        for (row, &id) in data.chunks_mut(d).zip(ids) {
            if id != 0 {
                row.copy_from_slice(tv.row(id));
            }
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
        };
        Ok(self.push(value, op, &[table]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Relu(x), &[x])
    }

    /// Inverted dropout; the identity when not training or when `rate` is 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let xv = self.value(x);
        let scale: Vec<f64> = (0..xv.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = xv.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { x, scale }, &[x]))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.len() != d || bv.len() != d {
            return Err(Error::Shape {
                op: "layer_norm",
                left: xv.shape().to_vec(),
                right: gv.shape().to_vec(),
            });
        }
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for ((&v, g), b) in row.iter().zip(gv.data()).zip(bv.data()) {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(g * h + b);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        Ok(self.push(value, op, &[x, gain, bias]))
    }

    /// Block-diagonal scaled dot-product attention.
    ///
    /// Rows of `q`, `k`, `v` are partitioned by `segments`; each segment
    /// attends only within itself. Keys with `key_mask[j] == false` get score
    /// [`MASK_FILL`]. With `heads > 1` the feature axis is split into equal
    /// slices and each slice is scaled by `1/sqrt(d / heads)`.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[Range<usize>],
        key_mask: &[bool],
        heads: usize,
        mapping: MappingKind,
        tag: &str,
    ) -> Result<Var> {
        mapping.validate()?;
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() || qv.rank() != 2 {
            return Err(Error::Shape {
                op: "attention",
                left: qv.shape().to_vec(),
                right: kv.shape().to_vec(),
            });
        }
        let (n_rows, d) = (qv.rows(), qv.cols());
        if key_mask.len() != n_rows {
            return Err(Error::Shape {
                op: "attention mask",
                left: qv.shape().to_vec(),
                right: vec![key_mask.len()],
            });
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("model dim {d} not divisible by {heads} heads")));
        }
        check_segments(segments, n_rows)?;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let alpha = mapping.alpha();

        let mut out = vec![0.0; n_rows * d];
        let mut probs = Vec::with_capacity(segments.len());
        let mut min_margin = self.min_margin;
        let mut scores = Vec::new();
        for seg in segments {
            let n = seg.len();
            let mask = &key_mask[seg.clone()];
            if !mask.iter().any(|&m| m) {
                return Err(Error::EmptyPool);
            }
            let mut seg_probs = vec![0.0; heads * n * n];
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..n {
                    let qi = &qv.row(seg.start + i)[cols.clone()];
                    scores.clear();
                    for j in 0..n {
                        scores.push(if mask[j] {
                            dot(qi, &kv.row(seg.start + j)[cols.clone()]) * scale
                        } else {
                            MASK_FILL
                        });
                    }
                    let (p, support) = mapping.apply_with_support(&scores)?;
                    if let Some(info) = support {
                        let margin = unmasked_margin(&scores, mask, alpha, info.threshold);
                        min_margin = min_margin.min(margin);
                    }
                    let p = p.into_vec();
                    let o = &mut out[(seg.start + i) * d..(seg.start + i + 1) * d][cols.clone()];
                    for (j, &pj) in p.iter().enumerate() {
                        if pj != 0.0 {
                            axpy(pj, &vv.row(seg.start + j)[cols.clone()], o);
                        }
                    }
                    seg_probs[(h * n + i) * n..(h * n + i + 1) * n].copy_from_slice(&p);
                }
            }
            probs.push(seg_probs);
        }
        self.min_margin = min_margin;
        if self.capture {
            self.captures.push(AttentionCapture {
                tag: tag.to_string(),
                heads,
                segments: segments.to_vec(),
                weights: probs.clone(),
            });
        }
        let value = Tensor::new(vec![n_rows, d], out)?;
        let state = AttentionState {
            q,
            k,
            v,
            segments: segments.to_vec(),
            key_mask: key_mask.to_vec(),
            heads,
            mapping,
            probs,
        };
        Ok(self.push(value, Op::Attention(Box::new(state)), &[q, k, v]))
    }

    /// Mean of the listed rows of `x`, one output row per group.
    pub fn group_mean(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        let mut out = vec![0.0; groups.len() * d];
        for (o, group) in out.chunks_mut(d).zip(groups) {
            if group.is_empty() {
                return Err(Error::EmptyPool);
            }
            for &r in group {
                if r >= xv.rows() {
                    return Err(Error::Shape {
                        op: "group_mean",
                        left: xv.shape().to_vec(),
                        right: vec![r],
                    });
                }
                axpy(1.0, xv.row(r), o);
            }
            let inv = 1.0 / group.len() as f64;
            o.iter_mut().for_each(|v| *v *= inv);
        }
        if groups.is_empty() {
            return Err(Error::EmptyPool);
        }
        let value = Tensor::new(vec![groups.len(), d], out)?;
        let op = Op::GroupMean {
            x,
            groups: groups.to_vec(),
        };
        Ok(self.push(value, op, &[x]))
    }

    /// Mean over the rows of `x` where `mask` is true; returns shape `[d]`.
    pub fn masked_mean_pool(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let rows = self.value(x).rows();
        if mask.len() != rows {
            return Err(Error::Shape {
                op: "masked_mean_pool",
                left: self.value(x).shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let group: Vec<usize> = (0..rows).filter(|&i| mask[i]).collect();
        let pooled = self.group_mean(x, &[group])?;
        let d = self.value(pooled).cols();
        self.nodes[pooled.0].value = self.nodes[pooled.0].value.clone().reshape(vec![d])?;
        Ok(pooled)
    }

    /// Mean binary cross-entropy with logits, in the overflow-free form.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.len() != labels.len() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                left: lv.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        let total: f64 = lv
            .data()
            .iter()
            .zip(labels)
            .map(|(&s, &y)| s.max(0.0) - s * y + (-s.abs()).exp().ln_1p())
            .sum();
        let value = Tensor::scalar(total / labels.len() as f64);
        let op = Op::Bce {
            logits,
            labels: labels.to_vec(),
        };
        Ok(self.push(value, op, &[logits]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(value, Op::Sum(x), &[x])
    }

    /// `Σ x_i w_i` for a fixed weight vector.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != weights.len() {
            return Err(Error::Shape {
                op: "weighted_sum",
                left: xv.shape().to_vec(),
                right: vec![weights.len()],
            });
        }
        let value = Tensor::scalar(dot(xv.data(), weights));
        let op = Op::WeightedSum {
            x,
            weights: weights.to_vec(),
        };
        Ok(self.push(value, op, &[x]))
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                left: self.value(output).shape().to_vec(),
                right: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &dy, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (rows, inner, out) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
                if self.wants(*x) {
                    let gx = slot(grads, *x, xv.len());
                    gemm(rows, out, inner, dy, (out, 1), wv.data(), (1, out), gx, 1.0);
                }
                if self.wants(*w) {
                    let gw = slot(grads, *w, wv.len());
                    gemm(inner, rows, out, xv.data(), (1, inner), dy, (out, 1), gw, 1.0);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let gb = slot(grads, *b, out);
                        for row in dy.chunks(out) {
                            axpy(1.0, row, gb);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        axpy(1.0, dy, slot(grads, v, dy.len()));
                    }
                }
            }
            Op::AddPositions { x, table, positions } => {
                if self.wants(*x) {
                    axpy(1.0, dy, slot(grads, *x, dy.len()));
                }
                if self.wants(*table) {
                    let tv = self.value(*table);
                    let d = tv.cols();
                    let gt = slot(grads, *table, tv.len());
                    for (row, &p) in dy.chunks(d).zip(positions) {
                        axpy(1.0, row, &mut gt[p * d..(p + 1) * d]);
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if self.wants(*table) {
                    let tv = self.value(*table);
                    let d = tv.cols();
                    let gt = slot(grads, *table, tv.len());
                    for (row, &id) in dy.chunks(d).zip(ids) {
                        if id != 0 {
                            axpy(1.0, row, &mut gt[id * d..(id + 1) * d]);
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x);
                    let gx = slot(grads, *x, xv.len());
                    for ((g, &d), &v) in gx.iter_mut().zip(dy).zip(xv.data()) {
                        if v > 0.0 {
                            *g += d;
                        }
                    }
                }
            }
            Op::Dropout { x, scale } => {
                if self.wants(*x) {
                    let gx = slot(grads, *x, dy.len());
                    for ((g, &d), &s) in gx.iter_mut().zip(dy).zip(scale) {
                        *g += d * s;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain).data().to_vec();
                let d = gv.len();
                if self.wants(*gain) {
                    let gg = slot(grads, *gain, d);
                    for (dyr, hr) in dy.chunks(d).zip(xhat.chunks(d)) {
                        for ((g, &a), &h) in gg.iter_mut().zip(dyr).zip(hr) {
                            *g += a * h;
                        }
                    }
                }
                if self.wants(*bias) {
                    let gb = slot(grads, *bias, d);
                    for dyr in dy.chunks(d) {
                        axpy(1.0, dyr, gb);
                    }
                }
                if self.wants(*x) {
                    let gx = slot(grads, *x, dy.len());
                    let mut dxhat = vec![0.0; d];
                    for (r, ((dyr, hr), gxr)) in dy.chunks(d).zip(xhat.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                        for ((o, &a), &g) in dxhat.iter_mut().zip(dyr).zip(&gv) {
                            *o = a * g;
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dh = dot(&dxhat, hr) / d as f64;
                        let inv = inv_std[r];
                        for ((o, &dh), &h) in gxr.iter_mut().zip(&dxhat).zip(hr) {
                            *o += inv * (dh - mean_d - h * mean_dh);
                        }
                    }
                }
            }
            Op::Attention(state) => self.backward_attention(state, dy, grads),
            Op::GroupMean { x, groups } => {
                if self.wants(*x) {
                    let xv = self.value(*x);
                    let d = xv.cols();
                    let gx = slot(grads, *x, xv.len());
                    for (dyr, group) in dy.chunks(d).zip(groups) {
                        let inv = 1.0 / group.len() as f64;
                        for &r in group {
                            axpy(inv, dyr, &mut gx[r * d..(r + 1) * d]);
                        }
                    }
                }
            }
            Op::Bce { logits, labels } => {
                if self.wants(*logits) {
                    let lv = self.value(*logits);
                    let n = labels.len() as f64;
                    let gl = slot(grads, *logits, lv.len());
                    for ((g, &s), &y) in gl.iter_mut().zip(lv.data()).zip(labels) {
                        *g += dy[0] * (sigmoid(s) - y) / n;
                    }
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let len = self.value(*x).len();
                    slot(grads, *x, len).iter_mut().for_each(|g| *g += dy[0]);
                }
            }
            Op::WeightedSum { x, weights } => {
                if self.wants(*x) {
                    axpy(dy[0], weights, slot(grads, *x, weights.len()));
                }
            }
        }
    }

    fn backward_attention(&self, st: &AttentionState, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (qv, kv, vv) = (self.value(st.q), self.value(st.k), self.value(st.v));
        let d = qv.cols();
        let dh = d / st.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = vec![0.0; qv.len()];
        let mut dk = vec![0.0; kv.len()];
        let mut dv = vec![0.0; vv.len()];
        let mut dp = Vec::new();
        let mut dz = Vec::new();
        for (seg, probs) in st.segments.iter().zip(&st.probs) {
            let n = seg.len();
            for h in 0..st.heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..n {
                    let row = seg.start + i;
                    let p = &probs[(h * n + i) * n..(h * n + i + 1) * n];
                    let dout = &dy[row * d..(row + 1) * d][cols.clone()];
                    dp.clear();
                    for j in 0..n {
                        let vj = &vv.row(seg.start + j)[cols.clone()];
                        dp.push(if st.key_mask[seg.start + j] { dot(dout, vj) } else { 0.0 });
                        if p[j] != 0.0 {
                            let r = seg.start + j;
                            axpy(p[j], dout, &mut dv[r * d..(r + 1) * d][cols.clone()]);
                        }
                    }
                    dz.resize(n, 0.0);
                    simplex::backward_into(p, &dp, st.mapping, &mut dz);
                    let qi = &qv.row(row)[cols.clone()];
                    for (j, &g) in dz.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let r = seg.start + j;
                        axpy(g * scale, &kv.row(r)[cols.clone()], &mut dq[row * d..(row + 1) * d][cols.clone()]);
                        axpy(g * scale, qi, &mut dk[r * d..(r + 1) * d][cols.clone()]);
                    }
                }
            }
        }
        for (var, g) in [(st.q, dq), (st.k, dk), (st.v, dv)] {
            if self.wants(var) {
                let len = g.len();
                axpy(1.0, &g, slot(grads, var, len));
            }
        }
    }
}

fn check_segments(segments: &[Range<usize>], rows: usize) -> Result<()> {
    for seg in segments {
        if seg.is_empty() || seg.end > rows {
            return Err(Error::Shape {
                op: "attention segment",
                left: vec![seg.start, seg.end],
                right: vec![rows],
            });
        }
    }
    Ok(())
}

fn unmasked_margin(scores: &[f64], mask: &[bool], alpha: f64, tau: f64) -> f64 {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| ((alpha - 1.0) * (s - max) - tau).abs())
        .fold(f64::INFINITY, f64::min)
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// `c = a·b + beta·c` for an `m×k` by `k×n` product with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
