use crate::attention::{AttentionRecord, RecordLevel};
use crate::data::{EncodedDocument, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{extract_attention_maps, Model};

/// Attention received by directive tokens in the sentences that contain them.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectiveMass {
    /// Per (sentence, head): mean over query rows of the weight on directive columns.
    pub masses: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    /// Fraction of non-directive cells that are exactly zero.
    pub non_directive_zero_fraction: f64,
}

/// For every sentence holding a directive token, the average weight its
/// queries put on directive columns.
pub fn directive_attention_mass(
    model: &Model,
    docs: &[EncodedDocument],
    vocab: &Vocabulary,
    directives: &[String],
) -> Result<DirectiveMass> {
    let mut masses = Vec::new();
    let (mut zeros, mut cells) = (0usize, 0usize);
    for doc in docs {
        let has = doc
            .sentences
            .iter()
            .flatten()
            .any(|&id| directives.iter().any(|t| vocab.get(t) == Some(id)));
        if !has {
            continue;
        }
        for rec in extract_attention_maps(model, doc, vocab, Some(directives))? {
            if rec.level != RecordLevel::Word {
                continue;
            }
            let (m, z, c) = record_mass(&rec, directives);
            masses.push(m);
            zeros += z;
            cells += c;
        }
    }
    if masses.is_empty() {
        return Err(Error::EmptyResult("no sentence contains a directive token".into()));
    }
    Ok(DirectiveMass {
        mean: masses.iter().sum::<f64>() / masses.len() as f64,
        median: median(&masses),
        non_directive_zero_fraction: if cells == 0 { 0.0 } else { zeros as f64 / cells as f64 },
        masses,
    })
}

/// Mass on directive columns, plus (zero, total) counts over the other columns.
fn record_mass(rec: &AttentionRecord, directives: &[String]) -> (f64, usize, usize) {
    let is_directive: Vec<bool> = rec.cols.iter().map(|c| directives.contains(c)).collect();
    let mut mass = 0.0;
    let (mut zeros, mut cells) = (0, 0);
    for row in &rec.weights {
        for (&w, &d) in row.iter().zip(&is_directive) {
            if d {
                mass += w;
            } else {
                cells += 1;
                zeros += (w == 0.0) as usize;
            }
        }
    }
    (mass / rec.weights.len() as f64, zeros, cells)
}

/// Sentence-level support statistics of a hierarchical model.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceSupport {
    /// Per document: mean over query sentences of the fraction of sentences attended.
    pub fractions: Vec<f64>,
    pub median: f64,
    pub mean: f64,
}

/// Support fractions for documents with at least `min_sentences` sentences
/// after truncation.
pub fn sentence_support(model: &Model, docs: &[EncodedDocument], vocab: &Vocabulary, min_sentences: usize) -> Result<SentenceSupport> {
    let cap = model.config.max_sents;
    let mut fractions = Vec::new();
    for doc in docs {
        let n = doc.sentences.iter().filter(|s| !s.is_empty()).count().min(cap);
        if n < min_sentences {
            continue;
        }
        let recs: Vec<AttentionRecord> = extract_attention_maps(model, doc, vocab, None)?
            .into_iter()
            .filter(|r| r.level == RecordLevel::Sentence)
            .collect();
        if recs.is_empty() {
            return Err(Error::EmptyResult("model has no sentence-level attention".into()));
        }
        fractions.push(recs.iter().map(AttentionRecord::support_fraction).sum::<f64>() / recs.len() as f64);
    }
    if fractions.is_empty() {
        return Err(Error::EmptyResult(format!("no document with at least {min_sentences} sentences")));
    }
    Ok(SentenceSupport {
        mean: fractions.iter().sum::<f64>() / fractions.len() as f64,
        median: median(&fractions),
        fractions,
    })
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lone_directive_gets_full_mass() {
        let rec = AttentionRecord {
            level: RecordLevel::Word,
            sentence: Some(0),
            head: 0,
            rows: vec!["cmo".into()],
            cols: vec!["cmo".into()],
            weights: vec![vec![1.0]],
        };
        assert_eq!(record_mass(&rec, &["cmo".to_string()]), (1.0, 0, 0));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
