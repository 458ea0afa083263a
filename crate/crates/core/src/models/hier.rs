use rand::Rng;

use super::{BatchLayout, ForwardOutput, ModelConfig};
use crate::attention::{init_encoder_params, transformer_encoder_layer, AttentionConfig};
use crate::data::Batch;
use crate::error::Result;
use crate::nn::{Graph, Params, Tensor};

pub(super) fn init_params<R: Rng + ?Sized>(cfg: &ModelConfig, params: &mut Params, rng: &mut R) {
    let h = cfg.hidden;
    params.insert("word_pos", Tensor::fan_in_uniform(&[cfg.max_words, h], h, rng));
    params.insert("sent_pos", Tensor::fan_in_uniform(&[cfg.max_sents, h], h, rng));
    for l in 0..cfg.word_layers {
        init_encoder_params(params, &format!("word.l{l}"), h, rng);
    }
    for l in 0..cfg.sent_layers {
        init_encoder_params(params, &format!("sent.l{l}"), h, rng);
    }
}

/// Tr-* forward: word transformer over each sentence, sentence vectors by
/// mean pooling, sentence transformer over each document, document mean,
/// prediction.
pub fn hier_forward<R: Rng + ?Sized>(
    g: &mut Graph,
    cfg: &ModelConfig,
    params: &Params,
    batch: &Batch,
    training: bool,
    rng: &mut R,
) -> Result<ForwardOutput> {
    let layout = BatchLayout::from_batch(batch)?;
    let level = |heads| AttentionConfig {
        model_dim: cfg.hidden,
        heads,
        mapping: cfg.mapping,
        dropout_rate: cfg.dropout,
        post_norm: cfg.post_norm,
    };

    let embed = g.param(params, "embed")?;
    let x = g.embedding(embed, &layout.ids)?;
    let (pw, pb) = (g.param(params, "proj.w")?, g.param(params, "proj.b")?);
    let h = g.linear(x, pw, Some(pb))?;
    let h = g.dropout(h, cfg.dropout, training, rng)?;
    let word_pos = g.param(params, "word_pos")?;
    let mut h = g.add_positions(h, word_pos, &layout.word_positions)?;

    let word_cfg = level(cfg.word_heads);
    let word_mask = vec![true; layout.ids.len()];
    for l in 0..cfg.word_layers {
        let prefix = format!("word.l{l}");
        h = transformer_encoder_layer(g, params, &prefix, h, &layout.sentence_rows, &word_mask, &word_cfg, training, rng, &prefix)?;
    }

    let sentence_groups: Vec<Vec<usize>> = layout.sentence_rows.iter().map(|r| r.clone().collect()).collect();
    let s = g.group_mean(h, &sentence_groups)?;
    let sent_pos = g.param(params, "sent_pos")?;
    let positions: Vec<usize> = layout.sentence_origin.iter().map(|&(_, i)| i).collect();
    let mut s = g.add_positions(s, sent_pos, &positions)?;

    let sent_cfg = level(cfg.sent_heads);
    let sent_mask = vec![true; layout.sentence_rows.len()];
    for l in 0..cfg.sent_layers {
        let prefix = format!("sent.l{l}");
        s = transformer_encoder_layer(g, params, &prefix, s, &layout.doc_sentences, &sent_mask, &sent_cfg, training, rng, &prefix)?;
    }

    let doc_groups: Vec<Vec<usize>> = layout.doc_sentences.iter().map(|r| r.clone().collect()).collect();
    let pooled = g.group_mean(s, &doc_groups)?;
    let (ow, ob) = (g.param(params, "out.w")?, g.param(params, "out.b")?);
    let logits = g.linear(pooled, ow, Some(ob))?;
    Ok(ForwardOutput { logits, layout })
}
