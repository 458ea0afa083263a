use std::fs;
use std::path::Path;

use serde::Serialize;

use super::calibration::{calibration_curve, CalibrationBins};
use crate::config::format_kv;
use crate::error::{Error, Result};

/// One scored document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub score: f64,
    pub label: u8,
}

impl PredictionRecord {
    pub fn new(doc_id: impl Into<String>, score: f64, label: u8) -> Result<Self> {
        if !(score.is_finite() && (0.0..=1.0).contains(&score)) {
            return Err(Error::invalid(format!("score {score} outside [0, 1]")));
        }
        if label > 1 {
            return Err(Error::invalid(format!("label {label} is not binary")));
        }
        Ok(PredictionRecord {
            doc_id: doc_id.into(),
            score,
            label,
        })
    }
}

fn class_counts(records: &[PredictionRecord]) -> (u64, u64) {
    let pos = records.iter().filter(|r| r.label == 1).count() as u64;
    (pos, records.len() as u64 - pos)
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ordered
/// correctly, ties counting one half.
pub fn auc_roc(records: &[PredictionRecord]) -> Result<f64> {
    let (pos, neg) = class_counts(records);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC-ROC needs both classes".into()));
    }
    let mut order: Vec<&PredictionRecord> = records.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score));
    // twice the rank sum of positives, using mid-ranks for ties
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && order[j].score == order[i].score {
            j += 1;
        }
        let twice_mid_rank = (i + 1 + j) as u64;
        let group_pos = order[i..j].iter().filter(|r| r.label == 1).count() as u64;
        twice_rank_sum += group_pos * twice_mid_rank;
        i = j;
    }
    let twice_u = twice_rank_sum - pos * (pos + 1);
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// Average precision over positives in descending score order, ties broken
/// by document id.
pub fn auc_pr(records: &[PredictionRecord]) -> Result<f64> {
    let (pos, _) = class_counts(records);
    if pos == 0 {
        return Err(Error::UndefinedMetric("AUC-PR needs at least one positive".into()));
    }
    let mut order: Vec<&PredictionRecord> = records.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
    let mut hits = 0u64;
    let mut total = 0.0;
    for (k, r) in order.iter().enumerate() {
        if r.label == 1 {
            hits += 1;
            total += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

pub fn brier(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::UndefinedMetric("Brier score of an empty set".into()));
    }
    let sum: f64 = records
        .iter()
        .map(|r| {
            let d = r.score - r.label as f64;
            d * d
        })
        .sum();
    Ok(sum / records.len() as f64)
}

/// Everything reported for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub brier: f64,
    pub n: usize,
    pub prevalence: f64,
    pub mean_score: f64,
    pub calibration: CalibrationBins,
}

impl MetricsReport {
    pub fn compute(records: &[PredictionRecord], bins: usize) -> Result<Self> {
        let n = records.len();
        let (pos, _) = class_counts(records);
        Ok(MetricsReport {
            auc_roc: auc_roc(records)?,
            auc_pr: auc_pr(records)?,
            brier: brier(records)?,
            n,
            prevalence: pos as f64 / n as f64,
            mean_score: records.iter().map(|r| r.score).sum::<f64>() / n as f64,
            calibration: calibration_curve(records, bins)?,
        })
    }

    /// `underpredicts` when the mean score falls short of the prevalence.
    pub fn calibration_direction(&self) -> &'static str {
        let gap = self.prevalence - self.mean_score;
        if gap.abs() < 1e-3 {
            "calibrated"
        } else if gap > 0.0 {
            "underpredicts"
        } else {
            "overpredicts"
        }
    }

    pub fn to_kv(&self) -> String {
        format_kv([
            ("auc_roc", format!("{:.6}", self.auc_roc)),
            ("auc_pr", format!("{:.6}", self.auc_pr)),
            ("brier", format!("{:.6}", self.brier)),
            ("n", self.n.to_string()),
            ("prevalence", format!("{:.6}", self.prevalence)),
            ("mean_score", format!("{:.6}", self.mean_score)),
            ("max_bin_deviation", format!("{:.6}", self.calibration.max_deviation())),
            ("calibration_direction", self.calibration_direction().to_string()),
        ])
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v["calibration_direction"] = self.calibration_direction().into();
        serde_json::to_string_pretty(&v).expect("report serializes")
    }

    /// Writes `<stem>.txt` (key=value) and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let txt = dir.join(format!("{stem}.txt"));
        fs::write(&txt, self.to_kv()).map_err(|e| Error::io(&txt, e))?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))
    }
}
