use rand::Rng;
use rand_distr::{Distribution, Zipf};

use super::PatientDocument;
use crate::config::{format_kv, parse_kv, parse_value};
use crate::error::{Error, Result};
use crate::rng;

/// Knobs of the synthetic directive-word corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpusConfig {
    /// Number of distinct filler words.
    pub vocab_size: usize,
    pub n_documents: usize,
    pub positive_rate: f64,
    pub directive_tokens: Vec<String>,
    pub p_directive_given_positive: f64,
    pub p_directive_given_negative: f64,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        SyntheticCorpusConfig {
            vocab_size: 2000,
            n_documents: 7143,
            positive_rate: 0.132,
            directive_tokens: vec!["dnr".into(), "dni".into(), "cmo".into()],
            p_directive_given_positive: 0.9,
            p_directive_given_negative: 0.05,
            min_sentences: 2,
            max_sentences: 8,
            min_words: 4,
            max_words: 12,
            zipf_exponent: 1.1,
            seed: 7,
        }
    }
}

impl SyntheticCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_directive_given_positive, self.p_directive_given_negative];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("directive probabilities must lie in [0, 1]".into()));
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return Err(Error::Config("positive_rate must lie in (0, 1)".into()));
        }
        if self.vocab_size == 0 || self.min_sentences == 0 || self.min_words == 0 {
            return Err(Error::Config("vocab_size, min_sentences and min_words must be positive".into()));
        }
        if self.min_sentences > self.max_sentences || self.min_words > self.max_words {
            return Err(Error::Config("min exceeds max in sentence or word counts".into()));
        }
        if self.directive_tokens.is_empty() {
            return Err(Error::Config("need at least one directive token".into()));
        }
        if !(self.zipf_exponent > 0.0) {
            return Err(Error::Config("zipf_exponent must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format_kv([
            ("vocab_size", self.vocab_size.to_string()),
            ("n_documents", self.n_documents.to_string()),
            ("positive_rate", self.positive_rate.to_string()),
            ("directive_tokens", self.directive_tokens.join(",")),
            ("p_directive_given_positive", self.p_directive_given_positive.to_string()),
            ("p_directive_given_negative", self.p_directive_given_negative.to_string()),
            ("min_sentences", self.min_sentences.to_string()),
            ("max_sentences", self.max_sentences.to_string()),
            ("min_words", self.min_words.to_string()),
            ("max_words", self.max_words.to_string()),
            ("zipf_exponent", self.zipf_exponent.to_string()),
            ("seed", self.seed.to_string()),
        ])
    }

    /// Overrides fields from `key=value` text; unknown keys are errors.
    pub fn apply_kv(&mut self, text: &str, origin: &str) -> Result<()> {
        for (k, v) in parse_kv(text, origin)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "vocab_size" => self.vocab_size = parse_value(key, v)?,
            "n_documents" => self.n_documents = parse_value(key, v)?,
            "positive_rate" => self.positive_rate = parse_value(key, v)?,
            "directive_tokens" => {
                self.directive_tokens = v.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
            }
            "p_directive_given_positive" => self.p_directive_given_positive = parse_value(key, v)?,
            "p_directive_given_negative" => self.p_directive_given_negative = parse_value(key, v)?,
            "min_sentences" => self.min_sentences = parse_value(key, v)?,
            "max_sentences" => self.max_sentences = parse_value(key, v)?,
            "min_words" => self.min_words = parse_value(key, v)?,
            "max_words" => self.max_words = parse_value(key, v)?,
            "zipf_exponent" => self.zipf_exponent = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown corpus key '{other}'"))),
        }
        Ok(())
    }
}

const SYLLABLES: [&str; 16] = [
    "ba", "ko", "mi", "ru", "te", "lo", "san", "vi", "de", "pu", "ne", "gar", "fo", "si", "ta", "mu",
];

/// Pronounceable filler word for rank `index`; distinct ranks give distinct words.
pub(crate) fn filler_word(index: usize) -> String {
    let mut n = index + SYLLABLES.len();
    let mut parts = Vec::new();
    while n > 0 {
        parts.push(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    parts.reverse();
    parts.concat()
}

/// Generates labelled documents whose only signal is the planted directive token.
///
/// Document `i` draws from its own stream of the seeded generator, so the
/// corpus is identical however documents are scheduled.
pub fn generate_synthetic_corpus(cfg: &SyntheticCorpusConfig) -> Result<Vec<PatientDocument>> {
    cfg.validate()?;
    let zipf = Zipf::new(cfg.vocab_size as f64, cfg.zipf_exponent)
        .map_err(|e| Error::Config(format!("zipf: {e}")))?;
    let words: Vec<String> = (0..cfg.vocab_size).map(filler_word).collect();

    let docs = (0..cfg.n_documents)
        .map(|i| {
            let mut rng = rng::stream(cfg.seed, i as u64);
            let positive = rng.random::<f64>() < cfg.positive_rate;
            let n_sent = rng.random_range(cfg.min_sentences..=cfg.max_sentences);
            let mut sentences: Vec<Vec<String>> = (0..n_sent)
                .map(|_| {
                    let len = rng.random_range(cfg.min_words..=cfg.max_words);
                    (0..len)
                        .map(|_| {
                            let rank = zipf.sample(&mut rng) as usize;
                            words[rank.clamp(1, cfg.vocab_size) - 1].clone()
                        })
                        .collect()
                })
                .collect();
            let p = if positive {
                cfg.p_directive_given_positive
            } else {
                cfg.p_directive_given_negative
            };
            if rng.random::<f64>() < p {
                let token = cfg.directive_tokens[rng.random_range(0..cfg.directive_tokens.len())].clone();
                let s = rng.random_range(0..sentences.len());
                let pos = rng.random_range(0..=sentences[s].len());
                sentences[s].insert(pos, token);
            }
            PatientDocument {
                id: format!("doc{i:06}"),
                label: positive as u8,
                sentences,
            }
        })
        .collect();
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filler_words_are_distinct() {
        let words: std::collections::HashSet<String> = (0..5000).map(filler_word).collect();
        assert_eq!(words.len(), 5000);
        assert!(!words.contains("dnr") && !words.contains("cmo") && !words.contains("dni"));
    }

    #[test]
    fn degenerate_directive_probabilities() {
        let cfg = SyntheticCorpusConfig {
            n_documents: 400,
            p_directive_given_positive: 1.0,
            p_directive_given_negative: 0.0,
            ..Default::default()
        };
        let directives = cfg.directive_tokens.clone();
        for doc in generate_synthetic_corpus(&cfg).unwrap() {
            assert_eq!(doc.contains_any(&directives), doc.label == 1, "{}", doc.id);
        }
    }

    #[test]
    fn shape_respects_config() {
        let cfg = SyntheticCorpusConfig {
            n_documents: 50,
            ..Default::default()
        };
        for doc in generate_synthetic_corpus(&cfg).unwrap() {
            assert!((2..=8).contains(&doc.sentences.len()));
            assert!(doc.sentences.iter().all(|s| (4..=13).contains(&s.len())));
        }
    }

    #[test]
    fn kv_round_trip() {
        let cfg = SyntheticCorpusConfig {
            seed: 99,
            positive_rate: 0.25,
            ..Default::default()
        };
        let mut back = SyntheticCorpusConfig::default();
        back.apply_kv(&cfg.to_kv(), "test").unwrap();
        assert_eq!(back, cfg);
        assert!(back.set("bogus", "1").is_err());
    }

    #[test]
    fn invalid_configs() {
        let bad = SyntheticCorpusConfig {
            positive_rate: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SyntheticCorpusConfig {
            p_directive_given_negative: -0.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
