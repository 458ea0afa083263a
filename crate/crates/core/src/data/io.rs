use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use super::PatientDocument;
use crate::error::{Error, Result};
use crate::rng;

/// Writes one JSON document per line (`id`, `label`, `sentences`).
pub fn write_dataset(path: &Path, docs: &[PatientDocument]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for doc in docs {
        let line = serde_json::to_string(doc).expect("documents serialize");
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<PatientDocument>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: PatientDocument = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: format!("line {}: {e}", n + 1),
        })?;
        if doc.label > 1 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: format!("line {}: label must be 0 or 1", n + 1),
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<PatientDocument>,
    pub validation: Vec<PatientDocument>,
    pub test: Vec<PatientDocument>,
}

/// Seeded shuffle, then cut into train / validation / test by `fractions`
/// (train and validation sizes rounded, test takes the rest).
pub fn split_dataset(docs: Vec<PatientDocument>, fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let n = docs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let n_train = ((n as f64) * a).round() as usize;
    let n_val = (((n as f64) * b).round() as usize).min(n - n_train);
    let mut slots: Vec<Option<PatientDocument>> = docs.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<PatientDocument> {
        idx.iter().map(|&i| slots[i].take().expect("each index once")).collect()
    };
    Ok(DatasetSplit {
        train: take(&order[..n_train]),
        validation: take(&order[n_train..n_train + n_val]),
        test: take(&order[n_train + n_val..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(n: usize) -> Vec<PatientDocument> {
        (0..n)
            .map(|i| PatientDocument {
                id: format!("d{i}"),
                label: (i % 3 == 0) as u8,
                sentences: vec![vec!["a".into(), format!("t{i}")]],
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let s = split_dataset(docs(7143), (0.7, 0.15, 0.15), 1).unwrap();
        assert_eq!(s.train.len(), 5000);
        assert_eq!(s.validation.len(), 1071);
        assert_eq!(s.test.len(), 1072);
        let mut ids: Vec<&String> = s.train.iter().chain(&s.validation).chain(&s.test).map(|d| &d.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 7143);
        assert_eq!(split_dataset(docs(7143), (0.7, 0.15, 0.15), 1).unwrap(), s);
        assert!(split_dataset(docs(3), (0.7, 0.2, 0.2), 1).is_err());
    }

    #[test]
    fn rejects_bad_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(&p, "{\"id\":\"x\",\"label\":2,\"sentences\":[[\"a\"]]}\n").unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Parse { .. })));
    }
}
