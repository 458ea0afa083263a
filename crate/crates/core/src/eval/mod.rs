//! Discrimination and calibration metrics, attention analysis and heatmap export.

mod analysis;
mod calibration;
mod heatmap;
mod metrics;

pub use analysis::{directive_attention_mass, sentence_support, DirectiveMass, SentenceSupport};
pub use calibration::{calibration_curve, write_reliability_csv, CalibrationBin, CalibrationBins};
pub use heatmap::{export_heatmap, import_heatmap, Heatmap};
pub use metrics::{auc_pr, auc_roc, brier, MetricsReport, PredictionRecord};
