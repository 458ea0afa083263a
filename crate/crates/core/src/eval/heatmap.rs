use std::path::Path;

use crate::attention::AttentionRecord;
use crate::error::{Error, Result};

/// Weights read back from a heatmap CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

/// Header row of column tokens, then one row per query token with weights
/// at six decimals.
pub fn export_heatmap(record: &AttentionRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec![String::new()];
    header.extend(record.cols.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (label, row) in record.rows.iter().zip(&record.weights) {
        let mut line = vec![label.clone()];
        line.extend(row.iter().map(|v| format!("{v:.6}")));
        w.write_record(&line).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn import_heatmap(path: &Path) -> Result<Heatmap> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut lines = r.records();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(path, "empty heatmap"))?
        .map_err(|e| csv_err(path, e))?;
    let cols: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    for line in lines {
        let line = line.map_err(|e| csv_err(path, e))?;
        let mut fields = line.iter();
        rows.push(fields.next().unwrap_or_default().to_string());
        let row = fields
            .map(|f| f.parse::<f64>().map_err(|_| parse_err(path, &format!("bad weight '{f}'"))))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != cols.len() {
            return Err(parse_err(path, "ragged heatmap row"));
        }
        weights.push(row);
    }
    Ok(Heatmap { rows, cols, weights })
}

fn parse_err(path: &Path, msg: &str) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: msg.to_string(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => parse_err(path, &format!("{other:?}")),
    }
}
