use super::{EncodedDocument, PAD_ID};
use crate::attention::PaddingMask;

/// Which sentences and words survive the `T` and `W` caps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TruncationPolicy {
    /// Keep the first `T` sentences and the first `W` words of each.
    #[default]
    KeepEarliest,
    /// Keep the last `T` sentences and the last `W` words of each.
    KeepLatest,
}

/// Drops empty sentences and applies the caps. Returns `None` if nothing is left.
pub fn truncate_document(
    doc: &EncodedDocument,
    max_words: usize,
    max_sents: usize,
    policy: TruncationPolicy,
) -> Option<EncodedDocument> {
    let clip = |s: &Vec<usize>| -> Vec<usize> {
        match policy {
            TruncationPolicy::KeepEarliest => s.iter().take(max_words).copied().collect(),
            TruncationPolicy::KeepLatest => s[s.len().saturating_sub(max_words)..].to_vec(),
        }
    };
    let non_empty: Vec<&Vec<usize>> = doc.sentences.iter().filter(|s| !s.is_empty()).collect();
    let kept: Vec<Vec<usize>> = match policy {
        TruncationPolicy::KeepEarliest => non_empty.iter().take(max_sents).map(|s| clip(s)).collect(),
        TruncationPolicy::KeepLatest => non_empty[non_empty.len().saturating_sub(max_sents)..]
            .iter()
            .map(|s| clip(s))
            .collect(),
    };
    if kept.is_empty() {
        return None;
    }
    Some(EncodedDocument {
        id: doc.id.clone(),
        label: doc.label,
        sentences: kept,
    })
}

/// A padded block of documents: ids are `[B, T, W]`, sentence mask `[B, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub max_sents: usize,
    pub max_words: usize,
    pub ids: Vec<usize>,
    pub word_mask: Vec<bool>,
    pub sentence_mask: Vec<bool>,
    pub labels: Vec<f64>,
    pub doc_ids: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sentence_ids(&self, doc: usize, sent: usize) -> &[usize] {
        let start = (doc * self.max_sents + sent) * self.max_words;
        &self.ids[start..start + self.max_words]
    }

    pub fn sentence_word_mask(&self, doc: usize, sent: usize) -> &[bool] {
        let start = (doc * self.max_sents + sent) * self.max_words;
        &self.word_mask[start..start + self.max_words]
    }

    pub fn doc_sentence_mask(&self, doc: usize) -> &[bool] {
        &self.sentence_mask[doc * self.max_sents..(doc + 1) * self.max_sents]
    }

    /// Sentence-level padding mask, one row per document.
    pub fn sentence_padding(&self) -> PaddingMask {
        PaddingMask::new((0..self.len()).map(|b| self.doc_sentence_mask(b).to_vec()).collect())
            .expect("documents in a batch are non-empty")
    }
}

/// Truncates, pads with id 0 and groups documents into batches.
///
/// Documents that end up empty are skipped with a warning.
pub fn pad_and_batch(
    docs: &[EncodedDocument],
    max_words: usize,
    max_sents: usize,
    batch_size: usize,
    policy: TruncationPolicy,
) -> Vec<Batch> {
    assert!(max_words >= 1 && max_sents >= 1 && batch_size >= 1, "caps and batch size must be positive");
    let kept: Vec<EncodedDocument> = docs
        .iter()
        .filter_map(|d| {
            let t = truncate_document(d, max_words, max_sents, policy);
            if t.is_none() {
                log::warn!("skipping document {}: empty after truncation", d.id);
            }
            t
        })
        .collect();

    kept.chunks(batch_size)
        .map(|chunk| {
            let b = chunk.len();
            let mut batch = Batch {
                max_sents,
                max_words,
                ids: vec![PAD_ID; b * max_sents * max_words],
                word_mask: vec![false; b * max_sents * max_words],
                sentence_mask: vec![false; b * max_sents],
                labels: Vec::with_capacity(b),
                doc_ids: Vec::with_capacity(b),
            };
            for (di, doc) in chunk.iter().enumerate() {
                for (si, sent) in doc.sentences.iter().enumerate() {
                    batch.sentence_mask[di * max_sents + si] = true;
                    let base = (di * max_sents + si) * max_words;
                    for (wi, &id) in sent.iter().enumerate() {
                        batch.ids[base + wi] = id;
                        batch.word_mask[base + wi] = true;
                    }
                }
                batch.labels.push(doc.label as f64);
                batch.doc_ids.push(doc.id.clone());
            }
            batch
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(sentences: Vec<Vec<usize>>) -> EncodedDocument {
        EncodedDocument {
            id: "d".into(),
            label: 1,
            sentences,
        }
    }

    #[test]
    fn pads_short_sentence() {
        let b = pad_and_batch(&[doc(vec![vec![5, 6, 7]])], 5, 1, 16, TruncationPolicy::KeepEarliest);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].sentence_ids(0, 0), &[5, 6, 7, 0, 0]);
        assert_eq!(b[0].sentence_word_mask(0, 0), &[true, true, true, false, false]);
    }

    #[test]
    fn remainder_batch() {
        let docs: Vec<_> = (0..7).map(|_| doc(vec![vec![2]])).collect();
        let b = pad_and_batch(&docs, 4, 4, 16, TruncationPolicy::KeepEarliest);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 7);
    }

    #[test]
    fn keeps_earliest_sentences() {
        let sentences: Vec<Vec<usize>> = (0..7).map(|i| vec![i + 2]).collect();
        let b = pad_and_batch(&[doc(sentences)], 3, 4, 1, TruncationPolicy::KeepEarliest);
        let kept: Vec<usize> = (0..4).map(|s| b[0].sentence_ids(0, s)[0]).collect();
        assert_eq!(kept, vec![2, 3, 4, 5]);
        assert_eq!(b[0].doc_sentence_mask(0), &[true; 4]);
    }

    #[test]
    fn keep_latest_policy() {
        let t = truncate_document(&doc(vec![vec![2, 3, 4], vec![5], vec![6]]), 2, 2, TruncationPolicy::KeepLatest)
            .unwrap();
        assert_eq!(t.sentences, vec![vec![5], vec![6]]);
        let t = truncate_document(&doc(vec![vec![2, 3, 4]]), 2, 2, TruncationPolicy::KeepLatest).unwrap();
        assert_eq!(t.sentences, vec![vec![3, 4]]);
    }

    #[test]
    fn empty_documents_are_skipped() {
        let b = pad_and_batch(&[doc(vec![vec![]]), doc(vec![vec![3]])], 3, 3, 4, TruncationPolicy::KeepEarliest);
        assert_eq!(b[0].len(), 1);
    }
}
