//! Scaled dot-product attention with a pluggable simplex mapping, and the
//! transformer encoder layer built on it.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AttentionCapture, Graph, Params, Tensor, Var, LAYER_NORM_EPS};
use crate::simplex::{MappingKind, ProbabilityVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub mapping: MappingKind,
    pub dropout_rate: f64,
    /// Post-norm (`LN(x + f(x))`) when true, pre-norm (`x + f(LN(x))`) otherwise.
    pub post_norm: bool,
}

impl AttentionConfig {
    pub fn new(model_dim: usize, heads: usize, mapping: MappingKind) -> Self {
        AttentionConfig {
            model_dim,
            heads,
            mapping,
            dropout_rate: 0.0,
            post_norm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 {
            return Err(Error::Config("model dim and head count must be positive".into()));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model dim {} not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout_rate)));
        }
        self.mapping.validate()
    }
}

/// `[batch, positions]` mask, true for real tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddingMask {
    rows: Vec<Vec<bool>>,
}

impl PaddingMask {
    pub fn new(rows: Vec<Vec<bool>>) -> Result<Self> {
        if rows.iter().any(|r| !r.iter().any(|&m| m)) {
            return Err(Error::EmptyPool);
        }
        Ok(PaddingMask { rows })
    }

    pub fn all_real(batch: usize, positions: usize) -> Self {
        PaddingMask {
            rows: vec![vec![true; positions]; batch],
        }
    }

    pub fn row(&self, b: usize) -> &[bool] {
        &self.rows[b]
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.rows
    }
}

/// Whether a record covers words in a sentence or sentences in a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordLevel {
    Word,
    Sentence,
}

impl std::fmt::Display for RecordLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RecordLevel::Word => "word",
            RecordLevel::Sentence => "sent",
        })
    }
}

/// One head's attention matrix with row and column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub level: RecordLevel,
    /// Sentence index within its document for word-level records.
    pub sentence: Option<usize>,
    pub head: usize,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

impl AttentionRecord {
    /// Splits a capture into one record per (segment, head).
    pub fn from_capture(
        capture: &AttentionCapture,
        level: RecordLevel,
        labels: impl Fn(usize, usize) -> (Vec<String>, Option<usize>),
    ) -> Vec<AttentionRecord> {
        let mut out = Vec::new();
        for (s, (seg, w)) in capture.segments.iter().zip(&capture.weights).enumerate() {
            let n = seg.len();
            let (names, sentence) = labels(s, n);
            for h in 0..capture.heads {
                let weights = (0..n)
                    .map(|i| w[(h * n + i) * n..(h * n + i + 1) * n].to_vec())
                    .collect();
                out.push(AttentionRecord {
                    level,
                    sentence,
                    head: h,
                    rows: names.clone(),
                    cols: names.clone(),
                    weights,
                });
            }
        }
        out
    }

    pub fn row_probability(&self, i: usize, tol: f64) -> Result<ProbabilityVector> {
        ProbabilityVector::new(self.weights[i].clone(), tol)
    }

    /// Re-checks every row as a probability vector.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for i in 0..self.weights.len() {
            self.row_probability(i, tol)?;
        }
        Ok(())
    }

    pub fn zero_count(&self) -> usize {
        self.weights.iter().flatten().filter(|&&w| w == 0.0).count()
    }

    /// Mean over rows of the fraction of columns with nonzero weight.
    pub fn support_fraction(&self) -> f64 {
        let n = self.cols.len() as f64;
        let total: f64 = self
            .weights
            .iter()
            .map(|r| r.iter().filter(|&&w| w > 0.0).count() as f64 / n)
            .sum();
        total / self.weights.len() as f64
    }
}

/// Eq.-1 attention on plain tensors: one sequence, no gradient.
pub fn scaled_dot_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: &[bool],
    mapping: MappingKind,
) -> Result<(Tensor, AttentionRecord)> {
    let mut g = Graph::with_capture();
    let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let n = q.rows();
    let out = g.attention(qv, kv, vv, &[0..n], mask, 1, mapping, "attention")?;
    let labels: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let record = AttentionRecord::from_capture(&g.captures()[0], RecordLevel::Word, |_, _| (labels.clone(), None))
        .remove(0);
    Ok((g.value(out).clone(), record))
}

/// Adds `W_q`, `W_k`, `W_v`, `W_o` and the output bias under `prefix`.
pub fn init_attention_params<R: Rng + ?Sized>(params: &mut Params, prefix: &str, d: usize, rng: &mut R) {
    for w in ["wq", "wk", "wv", "wo"] {
        params.insert(format!("{prefix}.{w}"), Tensor::fan_in_uniform(&[d, d], d, rng));
    }
    params.insert(format!("{prefix}.bo"), Tensor::zeros(&[d]));
}

/// Multi-head self-attention over the rows of `x`.
///
/// Heads see `d / heads` wide slices of the projected queries, keys and
/// values; their outputs are concatenated and passed through `W_o`.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    g: &mut Graph,
    params: &Params,
    prefix: &str,
    x: Var,
    segments: &[Range<usize>],
    mask: &[bool],
    cfg: &AttentionConfig,
    tag: &str,
) -> Result<Var> {
    cfg.validate()?;
    let d = g.value(x).cols();
    if d != cfg.model_dim {
        return Err(Error::Shape {
            op: "multi_head_attention",
            left: g.value(x).shape().to_vec(),
            right: vec![cfg.model_dim],
        });
    }
    let wq = g.param(params, &format!("{prefix}.wq"))?;
    let wk = g.param(params, &format!("{prefix}.wk"))?;
    let wv = g.param(params, &format!("{prefix}.wv"))?;
    let wo = g.param(params, &format!("{prefix}.wo"))?;
    let bo = g.param(params, &format!("{prefix}.bo"))?;
    let q = g.linear(x, wq, None)?;
    let k = g.linear(x, wk, None)?;
    let v = g.linear(x, wv, None)?;
    let heads = g.attention(q, k, v, segments, mask, cfg.heads, cfg.mapping, tag)?;
    g.linear(heads, wo, Some(bo))
}

/// `x_i + table_i` for the first `n` rows of a learned positional table.
pub fn add_positional_embeddings(g: &mut Graph, x: Var, table: Var) -> Result<Var> {
    let n = g.value(x).rows();
    let max = g.value(table).rows();
    if n > max {
        return Err(Error::Capacity { len: n, max });
    }
    let positions: Vec<usize> = (0..n).collect();
    g.add_positions(x, table, &positions)
}

/// Parameters of one encoder layer: attention, two layer norms and a
/// `d → 2d → d` feed-forward block.
pub fn init_encoder_params<R: Rng + ?Sized>(params: &mut Params, prefix: &str, d: usize, rng: &mut R) {
    init_attention_params(params, &format!("{prefix}.attn"), d, rng);
    for ln in ["ln1", "ln2"] {
        params.insert(format!("{prefix}.{ln}.gain"), Tensor::filled(&[d], 1.0));
        params.insert(format!("{prefix}.{ln}.bias"), Tensor::zeros(&[d]));
    }
    params.insert(format!("{prefix}.ffn.w1"), Tensor::fan_in_uniform(&[d, 2 * d], d, rng));
    params.insert(format!("{prefix}.ffn.b1"), Tensor::zeros(&[2 * d]));
    params.insert(format!("{prefix}.ffn.w2"), Tensor::fan_in_uniform(&[2 * d, d], 2 * d, rng));
    params.insert(format!("{prefix}.ffn.b2"), Tensor::zeros(&[d]));
}

fn layer_norm(g: &mut Graph, params: &Params, prefix: &str, x: Var) -> Result<Var> {
    let gain = g.param(params, &format!("{prefix}.gain"))?;
    let bias = g.param(params, &format!("{prefix}.bias"))?;
    g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
}

fn feed_forward(g: &mut Graph, params: &Params, prefix: &str, x: Var) -> Result<Var> {
    let w1 = g.param(params, &format!("{prefix}.w1"))?;
    let b1 = g.param(params, &format!("{prefix}.b1"))?;
    let w2 = g.param(params, &format!("{prefix}.w2"))?;
    let b2 = g.param(params, &format!("{prefix}.b2"))?;
    let h = g.linear(x, w1, Some(b1))?;
    let h = g.relu(h);
    g.linear(h, w2, Some(b2))
}

/// One transformer encoder layer; dropout hits sublayer outputs only.
#[allow(clippy::too_many_arguments)]
pub fn transformer_encoder_layer<R: Rng + ?Sized>(
    g: &mut Graph,
    params: &Params,
    prefix: &str,
    x: Var,
    segments: &[Range<usize>],
    mask: &[bool],
    cfg: &AttentionConfig,
    training: bool,
    rng: &mut R,
    tag: &str,
) -> Result<Var> {
    let attn = format!("{prefix}.attn");
    let ln1 = format!("{prefix}.ln1");
    let ln2 = format!("{prefix}.ln2");
    let ffn = format!("{prefix}.ffn");
    if cfg.post_norm {
        let a = multi_head_attention(g, params, &attn, x, segments, mask, cfg, tag)?;
        let a = g.dropout(a, cfg.dropout_rate, training, rng)?;
        let y = g.add(x, a)?;
        let y = layer_norm(g, params, &ln1, y)?;
        let f = feed_forward(g, params, &ffn, y)?;
        let f = g.dropout(f, cfg.dropout_rate, training, rng)?;
        let z = g.add(y, f)?;
        layer_norm(g, params, &ln2, z)
    } else {
        let h = layer_norm(g, params, &ln1, x)?;
        let a = multi_head_attention(g, params, &attn, h, segments, mask, cfg, tag)?;
        let a = g.dropout(a, cfg.dropout_rate, training, rng)?;
        let y = g.add(x, a)?;
        let h = layer_norm(g, params, &ln2, y)?;
        let f = feed_forward(g, params, &ffn, h)?;
        let f = g.dropout(f, cfg.dropout_rate, training, rng)?;
        g.add(y, f)
    }
}
