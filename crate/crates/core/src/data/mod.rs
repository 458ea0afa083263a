//! Documents, tokenization, vocabularies, batching and the synthetic corpus.

mod batch;
mod io;
mod synth;
mod vocab;

use serde::{Deserialize, Serialize};

pub use batch::{pad_and_batch, truncate_document, Batch, TruncationPolicy};
pub use io::{read_dataset, split_dataset, write_dataset, DatasetSplit};
pub use synth::{generate_synthetic_corpus, SyntheticCorpusConfig};
pub use vocab::{build_vocab, Vocabulary, PAD_ID, UNK_ID};

/// A patient's notes as tokenized sentences plus the binary outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientDocument {
    pub id: String,
    pub label: u8,
    pub sentences: Vec<Vec<String>>,
}

impl PatientDocument {
    pub fn contains_any(&self, tokens: &[String]) -> bool {
        self.sentences.iter().flatten().any(|t| tokens.contains(t))
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// A document after vocabulary lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDocument {
    pub id: String,
    pub label: u8,
    pub sentences: Vec<Vec<usize>>,
}

/// Lowercases, splits on whitespace and peels leading and trailing
/// punctuation off each word as single-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_lowercase();
        let chars: Vec<char> = word.chars().collect();
        let start = chars.iter().position(|c| !c.is_ascii_punctuation()).unwrap_or(chars.len());
        let end = chars.iter().rposition(|c| !c.is_ascii_punctuation()).map_or(start, |e| e + 1);
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        if start < end {
            out.push(chars[start..end].iter().collect());
        }
        out.extend(chars[end.max(start)..].iter().map(|c| c.to_string()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("DNR discussed."), vec!["dnr", "discussed", "."]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("comfort measures only"), vec!["comfort", "measures", "only"]);
        assert_eq!(tokenize("  (CMO), ok"), vec!["(", "cmo", ")", ",", "ok"]);
        assert_eq!(tokenize("..."), vec![".", ".", "."]);
        assert_eq!(tokenize("o'clock"), vec!["o'clock"]);
    }
}
