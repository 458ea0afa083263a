//! Flat `key=value` text used for configs, manifests and reports.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_string(),
            message: format!("line {}: expected key=value", n + 1),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn format_kv<K: Display, V: Display>(pairs: impl IntoIterator<Item = (K, V)>) -> String {
    pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for '{key}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_skips_comments() {
        let kv = parse_kv("# run\nseed = 3\n\nmapping=entmax:1.5\n", "t").unwrap();
        assert_eq!(kv, vec![("seed".into(), "3".into()), ("mapping".into(), "entmax:1.5".into())]);
        assert!(parse_kv("oops", "t").is_err());
    }
}
