use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::metrics::PredictionRecord;
use crate::error::{Error, Result};

/// One equal-width reliability bin; empty bins carry `None` statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_predicted: Option<f64>,
    pub fraction_positive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationBins {
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationBins {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Largest |mean predicted - fraction positive| over populated bins.
    pub fn max_deviation(&self) -> f64 {
        self.bins
            .iter()
            .filter_map(|b| Some((b.mean_predicted? - b.fraction_positive?).abs()))
            .fold(0.0, f64::max)
    }

    pub fn populated(&self) -> impl Iterator<Item = &CalibrationBin> {
        self.bins.iter().filter(|b| b.count > 0)
    }
}

/// Equal-width bins over [0, 1]; a score of exactly 1 falls in the last bin.
pub fn calibration_curve(records: &[PredictionRecord], bins: usize) -> Result<CalibrationBins> {
    if bins < 2 {
        return Err(Error::invalid("calibration needs at least two bins"));
    }
    let mut sums = vec![(0usize, 0.0f64, 0usize); bins];
    for r in records {
        let b = ((r.score * bins as f64) as usize).min(bins - 1);
        sums[b].0 += 1;
        sums[b].1 += r.score;
        sums[b].2 += r.label as usize;
    }
    let bins_out = sums
        .iter()
        .enumerate()
        .map(|(i, &(count, score_sum, pos))| CalibrationBin {
            lower: i as f64 / bins as f64,
            upper: (i + 1) as f64 / bins as f64,
            count,
            mean_predicted: (count > 0).then(|| score_sum / count as f64),
            fraction_positive: (count > 0).then(|| pos as f64 / count as f64),
        })
        .collect();
    Ok(CalibrationBins { bins: bins_out })
}

/// CSV with one line per bin; empty bins leave the statistics blank.
pub fn write_reliability_csv(bins: &CalibrationBins, path: &Path) -> Result<()> {
    let mut out = String::from("bin,lower,upper,count,mean_predicted,fraction_positive\n");
    for (i, b) in bins.bins.iter().enumerate() {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{i},{:.6},{:.6},{},{},{}",
            b.lower,
            b.upper,
            b.count,
            fmt(b.mean_predicted),
            fmt(b.fraction_positive)
        )
        .expect("writing to a String");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_scores_fill_one_bin() {
        let recs: Vec<_> = (0..10)
            .map(|i| PredictionRecord::new(format!("{i}"), 0.7, (i < 7) as u8).unwrap())
            .collect();
        let c = calibration_curve(&recs, 10).unwrap();
        let populated: Vec<_> = c.populated().collect();
        assert_eq!(populated.len(), 1);
        assert!((populated[0].mean_predicted.unwrap() - 0.7).abs() < 1e-12);
        assert!((populated[0].fraction_positive.unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(c.total(), 10);
        assert_eq!(c.bins.iter().filter(|b| b.mean_predicted.is_none()).count(), 9);
    }

    #[test]
    fn score_one_lands_in_last_bin() {
        let recs = vec![PredictionRecord::new("a", 1.0, 1).unwrap(), PredictionRecord::new("b", 0.0, 0).unwrap()];
        let c = calibration_curve(&recs, 4).unwrap();
        assert_eq!(c.bins[3].count, 1);
        assert_eq!(c.bins[0].count, 1);
        assert!(calibration_curve(&recs, 1).is_err());
    }

    #[test]
    fn csv_has_header_and_bins() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rel.csv");
        let c = calibration_curve(&[PredictionRecord::new("a", 0.55, 1).unwrap()], 10).unwrap();
        write_reliability_csv(&c, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert!(text.contains("5,0.500000,0.600000,1,0.550000,1.000000"));
    }
}
