use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token ↔ id map with padding at 0 and unknown at 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    pub min_frequency: usize,
}

impl Vocabulary {
    /// Vocabulary with `words` at ids 2, 3, ... after the reserved entries.
    pub fn from_tokens(words: Vec<String>, min_frequency: usize) -> Self {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(words);
        let index = tokens.iter().enumerate().skip(2).map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            index,
            tokens,
            min_frequency,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK_TOKEN, String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn encode_document(&self, doc: &super::PatientDocument) -> super::EncodedDocument {
        super::EncodedDocument {
            id: doc.id.clone(),
            label: doc.label,
            sentences: doc.sentences.iter().map(|s| self.encode(s)).collect(),
        }
    }

    /// One token per line, in id order, after a `min_frequency=` header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = format!("min_frequency={}\n", self.min_frequency);
        for t in self.tokens.iter().skip(2) {
            text.push_str(t);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let min_frequency = lines
            .next()
            .and_then(|l| l.strip_prefix("min_frequency="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                message: "missing min_frequency header".into(),
            })?;
        Ok(Self::from_tokens(lines.map(str::to_string).collect(), min_frequency))
    }
}

/// Keeps tokens seen at least `min_freq` times; ids follow
/// (frequency descending, token ascending).
pub fn build_vocab<'a, I, S>(streams: I, min_freq: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: IntoIterator<Item = &'a String>,
{
    if min_freq == 0 {
        return Err(Error::invalid("min_freq must be at least 1"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for stream in streams {
        for t in stream {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyVocab);
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_freq).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Ok(Vocabulary::from_tokens(
        kept.into_iter().map(|(t, _)| t.to_string()).collect(),
        min_freq,
    ))
}
