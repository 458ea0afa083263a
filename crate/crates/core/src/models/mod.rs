//! The two model families.
//!
//! * `Att-*`: embeddings, a linear projection, one self-attention layer per
//!   sentence, a flat mean over every word of the document and a linear
//!   prediction layer.
//! * `Tr-*`: a word-level transformer with word positions, per-sentence mean,
//!   sentence positions, a sentence-level transformer, document mean and a
//!   linear prediction layer.
//!
//! Both are parameterized by the attention [`MappingKind`]; parameter shapes do
//! not depend on it, so checkpoints move freely between mappings.

mod hier;
mod local;

use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::attention::{AttentionRecord, RecordLevel};
use crate::config::{format_kv, parse_kv, parse_value};
use crate::data::{pad_and_batch, truncate_document, Batch, EncodedDocument, TruncationPolicy, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::PredictionRecord;
use crate::nn::{sigmoid, Graph, Params, Tensor, Var};
use crate::simplex::MappingKind;

pub use hier::hier_forward;
pub use local::local_forward;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    /// Local word-level self-attention.
    Att,
    /// Hierarchical transformer.
    Tr,
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::Att => "att",
            ModelFamily::Tr => "tr",
        })
    }
}

impl FromStr for ModelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "att" => Ok(ModelFamily::Att),
            "tr" => Ok(ModelFamily::Tr),
            other => Err(Error::Config(format!("unknown model family '{other}' (expected att|tr)"))),
        }
    }
}

/// Architecture hyperparameters for either family.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub family: ModelFamily,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub mapping: MappingKind,
    pub dropout: f64,
    pub word_layers: usize,
    pub word_heads: usize,
    pub sent_layers: usize,
    pub sent_heads: usize,
    /// Word cap `W`, also the size of the word positional table.
    pub max_words: usize,
    /// Sentence cap `T`, also the size of the sentence positional table.
    pub max_sents: usize,
    /// Att only: use the projected embeddings directly as Q, K and V.
    pub shared_projection: bool,
    pub post_norm: bool,
    pub truncation: TruncationPolicy,
}

impl ModelConfig {
    pub fn new(family: ModelFamily, vocab_size: usize, mapping: MappingKind) -> Self {
        ModelConfig {
            family,
            vocab_size,
            embed_dim: 100,
            hidden: 128,
            mapping,
            dropout: 0.2,
            word_layers: 1,
            word_heads: 1,
            sent_layers: 1,
            sent_heads: 1,
            max_words: 20,
            max_sents: 40,
            shared_projection: false,
            post_norm: true,
            truncation: TruncationPolicy::KeepEarliest,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.vocab_size, self.embed_dim, self.hidden, self.max_words, self.max_sents];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions and caps must be positive".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocabulary must hold the padding and unknown ids".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        for (heads, what) in [(self.word_heads, "word"), (self.sent_heads, "sentence")] {
            if heads == 0 || !self.hidden.is_multiple_of(heads) {
                return Err(Error::Config(format!(
                    "hidden {} not divisible by {heads} {what} heads",
                    self.hidden
                )));
            }
        }
        if self.family == ModelFamily::Tr && (self.word_layers == 0 || self.sent_layers == 0) {
            return Err(Error::Config("hierarchical model needs at least one layer per level".into()));
        }
        if self.shared_projection && self.word_heads != 1 {
            return Err(Error::Config("shared projection supports a single head only".into()));
        }
        self.mapping.validate()
    }

    pub fn to_kv(&self) -> String {
        format_kv([
            ("family", self.family.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden", self.hidden.to_string()),
            ("mapping", self.mapping.to_string()),
            ("dropout", self.dropout.to_string()),
            ("word_layers", self.word_layers.to_string()),
            ("word_heads", self.word_heads.to_string()),
            ("sent_layers", self.sent_layers.to_string()),
            ("sent_heads", self.sent_heads.to_string()),
            ("max_words", self.max_words.to_string()),
            ("max_sents", self.max_sents.to_string()),
            ("shared_projection", self.shared_projection.to_string()),
            ("post_norm", self.post_norm.to_string()),
            (
                "truncation",
                match self.truncation {
                    TruncationPolicy::KeepEarliest => "earliest",
                    TruncationPolicy::KeepLatest => "latest",
                }
                .to_string(),
            ),
        ])
    }

    pub fn from_kv(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = ModelConfig::new(ModelFamily::Att, 2, MappingKind::Softmax);
        for (k, v) in parse_kv(text, origin)? {
            match k.as_str() {
                "family" => cfg.family = v.parse()?,
                "vocab_size" => cfg.vocab_size = parse_value(&k, &v)?,
                "embed_dim" => cfg.embed_dim = parse_value(&k, &v)?,
                "hidden" => cfg.hidden = parse_value(&k, &v)?,
                "mapping" => cfg.mapping = v.parse()?,
                "dropout" => cfg.dropout = parse_value(&k, &v)?,
                "word_layers" => cfg.word_layers = parse_value(&k, &v)?,
                "word_heads" => cfg.word_heads = parse_value(&k, &v)?,
                "sent_layers" => cfg.sent_layers = parse_value(&k, &v)?,
                "sent_heads" => cfg.sent_heads = parse_value(&k, &v)?,
                "max_words" => cfg.max_words = parse_value(&k, &v)?,
                "max_sents" => cfg.max_sents = parse_value(&k, &v)?,
                "shared_projection" => cfg.shared_projection = parse_value(&k, &v)?,
                "post_norm" => cfg.post_norm = parse_value(&k, &v)?,
                "truncation" => {
                    cfg.truncation = match v.as_str() {
                        "earliest" => TruncationPolicy::KeepEarliest,
                        "latest" => TruncationPolicy::KeepLatest,
                        _ => return Err(Error::Config(format!("unknown truncation policy '{v}'"))),
                    }
                }
                other => return Err(Error::Config(format!("unknown model key '{other}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Result of one forward pass over a batch.
pub struct ForwardOutput {
    /// `[B, 1]` logits.
    pub logits: Var,
    /// Row layout of the flattened batch, for labelling attention captures.
    pub layout: BatchLayout,
}

/// Where each real token and sentence of a batch landed in the flat matrices.
#[derive(Debug, Clone, Default)]
pub struct BatchLayout {
    pub ids: Vec<usize>,
    /// Word position inside its sentence, per token row.
    pub word_positions: Vec<usize>,
    /// Token rows of each sentence.
    pub sentence_rows: Vec<Range<usize>>,
    /// `(document, sentence index)` per sentence row.
    pub sentence_origin: Vec<(usize, usize)>,
    /// Sentence rows of each document.
    pub doc_sentences: Vec<Range<usize>>,
}

impl BatchLayout {
    pub fn from_batch(batch: &Batch) -> Result<Self> {
        let mut layout = BatchLayout::default();
        for d in 0..batch.len() {
            let first_sentence = layout.sentence_rows.len();
            for s in 0..batch.max_sents {
                if !batch.doc_sentence_mask(d)[s] {
                    continue;
                }
                let start = layout.ids.len();
                let ids = batch.sentence_ids(d, s);
                for (w, &real) in batch.sentence_word_mask(d, s).iter().enumerate() {
                    if real {
                        layout.ids.push(ids[w]);
                        layout.word_positions.push(w);
                    }
                }
                if layout.ids.len() > start {
                    layout.sentence_rows.push(start..layout.ids.len());
                    layout.sentence_origin.push((d, s));
                }
            }
            if layout.sentence_rows.len() == first_sentence {
                return Err(Error::EmptyDocument(batch.doc_ids[d].clone()));
            }
            layout.doc_sentences.push(first_sentence..layout.sentence_rows.len());
        }
        Ok(layout)
    }

    pub fn doc_token_rows(&self) -> Vec<Vec<usize>> {
        self.doc_sentences
            .iter()
            .map(|r| self.sentence_rows[r.clone()].iter().flat_map(|s| s.clone()).collect())
            .collect()
    }
}

/// A model family with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
}

impl Model {
    /// Fresh parameters: N(0, 1) embeddings with a zero padding row,
    /// fan-in uniform weight matrices and positional tables, zero biases.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = Params::new();
        let (e, h) = (config.embed_dim, config.hidden);
        let mut embed = Tensor::normal(&[config.vocab_size, e], 1.0, rng);
        embed.data_mut()[..e].iter_mut().for_each(|v| *v = 0.0);
        params.insert("embed", embed);
        params.insert("proj.w", Tensor::fan_in_uniform(&[e, h], e, rng));
        params.insert("proj.b", Tensor::zeros(&[h]));
        match config.family {
            ModelFamily::Att => local::init_params(&config, &mut params, rng),
            ModelFamily::Tr => hier::init_params(&config, &mut params, rng),
        }
        params.insert("out.w", Tensor::fan_in_uniform(&[h, 1], h, rng));
        params.insert("out.b", Tensor::zeros(&[1]));
        Ok(Model { config, params })
    }

    /// Swaps in `params` after checking names and shapes against a fresh init.
    pub fn with_params(config: ModelConfig, params: Params) -> Result<Self> {
        let reference = Model::init(config.clone(), &mut crate::rng::seeded(0))?;
        for (name, t) in reference.params.iter() {
            let got = params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
            if got.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::Checkpoint("checkpoint holds unexpected parameters".into()));
        }
        Ok(Model { config, params })
    }

    /// Same parameters under a different attention mapping.
    pub fn with_mapping(&self, mapping: MappingKind) -> Result<Self> {
        mapping.validate()?;
        let mut config = self.config.clone();
        config.mapping = mapping;
        Ok(Model {
            config,
            params: self.params.clone(),
        })
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        params: &Params,
        batch: &Batch,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        match self.config.family {
            ModelFamily::Att => local_forward(g, &self.config, params, batch, training, rng),
            ModelFamily::Tr => hier_forward(g, &self.config, params, batch, training, rng),
        }
    }

    /// Evaluation-mode logits for one batch.
    pub fn logits(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, &self.params, batch, false, &mut crate::rng::seeded(0))?;
        Ok(g.value(out.logits).data().to_vec())
    }

    pub fn batches(&self, docs: &[EncodedDocument], batch_size: usize) -> Vec<Batch> {
        pad_and_batch(docs, self.config.max_words, self.config.max_sents, batch_size, self.config.truncation)
    }

    /// Scores every document with the sigmoid of its logit.
    pub fn predict(&self, docs: &[EncodedDocument], batch_size: usize) -> Result<Vec<PredictionRecord>> {
        let mut out = Vec::with_capacity(docs.len());
        for batch in self.batches(docs, batch_size) {
            let logits = self.logits(&batch)?;
            for ((id, &s), &y) in batch.doc_ids.iter().zip(&logits).zip(&batch.labels) {
                out.push(PredictionRecord::new(id.clone(), predict_proba(s), y as u8)?);
            }
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let cfg_path = dir.join("model.cfg");
        fs::write(&cfg_path, self.config.to_kv()).map_err(|e| Error::io(&cfg_path, e))?;
        self.params.save(&dir.join(format!("{stem}.ckpt")))
    }

    pub fn load(config_path: &Path, checkpoint: &Path) -> Result<Self> {
        let text = fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
        let config = ModelConfig::from_kv(&text, &config_path.display().to_string())?;
        Model::with_params(config, Params::load(checkpoint)?)
    }
}

/// Overflow-free logistic function.
pub fn predict_proba(logit: f64) -> f64 {
    sigmoid(logit)
}

/// Attention maps for one document, labelled with surface tokens.
///
/// Word-level records come from the last word layer, one per sentence and
/// head. `Tr` models add the last sentence-level layer's record. With a
/// filter, only sentences containing a filter token are kept (and the
/// sentence-level record only if some sentence matched); filter tokens
/// missing from the vocabulary are logged and ignored.
pub fn extract_attention_maps(
    model: &Model,
    doc: &EncodedDocument,
    vocab: &Vocabulary,
    filter: Option<&[String]>,
) -> Result<Vec<AttentionRecord>> {
    let cfg = &model.config;
    let doc = truncate_document(doc, cfg.max_words, cfg.max_sents, cfg.truncation)
        .ok_or_else(|| Error::EmptyDocument(doc.id.clone()))?;
    let batch = pad_and_batch(std::slice::from_ref(&doc), cfg.max_words, cfg.max_sents, 1, cfg.truncation)
        .pop()
        .ok_or_else(|| Error::EmptyDocument(doc.id.clone()))?;

    let mut g = Graph::with_capture();
    let out = model.forward(&mut g, &model.params, &batch, false, &mut crate::rng::seeded(0))?;
    let layout = out.layout;

    let filter_ids: Option<Vec<usize>> = filter.map(|tokens| {
        tokens
            .iter()
            .filter_map(|t| {
                let id = vocab.get(t);
                if id.is_none() {
                    log::warn!("filter token '{t}' is not in the vocabulary");
                }
                id
            })
            .collect()
    });

    let word_tag = match cfg.family {
        ModelFamily::Att => "word".to_string(),
        ModelFamily::Tr => format!("word.l{}", cfg.word_layers - 1),
    };
    let captures = g.captures();
    let word = captures
        .iter()
        .find(|c| c.tag == word_tag)
        .ok_or_else(|| Error::EmptyResult("no word-level attention captured".into()))?;

    let keep_sentence = |s: usize| -> bool {
        match &filter_ids {
            None => true,
            Some(ids) => layout.ids[layout.sentence_rows[s].clone()].iter().any(|t| ids.contains(t)),
        }
    };
    let mut records: Vec<AttentionRecord> = AttentionRecord::from_capture(word, RecordLevel::Word, |s, _| {
        let labels = layout.ids[layout.sentence_rows[s].clone()]
            .iter()
            .map(|&id| vocab.token(id).to_string())
            .collect();
        (labels, Some(layout.sentence_origin[s].1))
    })
    .into_iter()
    .filter(|r| {
        let s = layout
            .sentence_origin
            .iter()
            .position(|o| Some(o.1) == r.sentence)
            .expect("record sentence exists");
        keep_sentence(s)
    })
    .collect();

    if cfg.family == ModelFamily::Tr && (filter.is_none() || !records.is_empty()) {
        let tag = format!("sent.l{}", cfg.sent_layers - 1);
        if let Some(sent) = captures.iter().find(|c| c.tag == tag) {
            records.extend(AttentionRecord::from_capture(sent, RecordLevel::Sentence, |_, n| {
                ((0..n).map(|i| format!("s{}", layout.sentence_origin[i].1)).collect(), None)
            }));
        }
    }
    Ok(records)
}
