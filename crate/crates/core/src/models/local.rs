use rand::Rng;

use super::{BatchLayout, ForwardOutput, ModelConfig};
use crate::data::Batch;
use crate::error::Result;
use crate::nn::{Graph, Params, Tensor};

pub(super) fn init_params<R: Rng + ?Sized>(cfg: &ModelConfig, params: &mut Params, rng: &mut R) {
    if !cfg.shared_projection {
        let h = cfg.hidden;
        for w in ["wq", "wk", "wv"] {
            params.insert(format!("attn.{w}"), Tensor::fan_in_uniform(&[h, h], h, rng));
        }
    }
}

/// Att-* forward: embed, project, attend within each sentence, average every
/// word of the document, predict.
pub fn local_forward<R: Rng + ?Sized>(
    g: &mut Graph,
    cfg: &ModelConfig,
    params: &Params,
    batch: &Batch,
    training: bool,
    rng: &mut R,
) -> Result<ForwardOutput> {
    let layout = BatchLayout::from_batch(batch)?;
    let embed = g.param(params, "embed")?;
    let x = g.embedding(embed, &layout.ids)?;
    let (pw, pb) = (g.param(params, "proj.w")?, g.param(params, "proj.b")?);
    let h = g.linear(x, pw, Some(pb))?;
    let h = g.dropout(h, cfg.dropout, training, rng)?;

    let (q, k, v) = if cfg.shared_projection {
        (h, h, h)
    } else {
        let wq = g.param(params, "attn.wq")?;
        let wk = g.param(params, "attn.wk")?;
        let wv = g.param(params, "attn.wv")?;
        (g.linear(h, wq, None)?, g.linear(h, wk, None)?, g.linear(h, wv, None)?)
    };
    let mask = vec![true; layout.ids.len()];
    let a = g.attention(q, k, v, &layout.sentence_rows, &mask, cfg.word_heads, cfg.mapping, "word")?;
    let a = g.dropout(a, cfg.dropout, training, rng)?;

    let pooled = g.group_mean(a, &layout.doc_token_rows())?;
    let (ow, ob) = (g.param(params, "out.w")?, g.param(params, "out.b")?);
    let logits = g.linear(pooled, ow, Some(ob))?;
    Ok(ForwardOutput { logits, layout })
}
