//! Mini-batch training with validation-based model selection.

use rand::seq::SliceRandom;

use crate::data::EncodedDocument;
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::models::Model;
use crate::nn::{AdamConfig, AdamState, Graph};
use crate::rng::LabRng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub calibration_bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            adam: AdamConfig::default(),
            calibration_bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: MetricsReport,
}

impl EpochMetrics {
    pub const TSV_HEADER: &'static str = "epoch\ttrain_loss\tauc_roc\tauc_pr\tbrier";

    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.train_loss, self.validation.auc_roc, self.validation.auc_pr, self.validation.brier
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// 1-based epoch with the highest validation AUC-ROC (earliest on ties).
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
    pub best: Model,
    pub last: Model,
}

/// Trains `model` with Adam on binary cross-entropy.
///
/// Each epoch reshuffles the training documents with `rng`, which also
/// drives dropout. `on_epoch` sees each epoch's metrics as they land.
pub fn train(
    mut model: Model,
    train_docs: &[EncodedDocument],
    validation: &[EncodedDocument],
    cfg: &TrainConfig,
    rng: &mut LabRng,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    if train_docs.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut adam = AdamState::new(cfg.adam);
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Model)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let shuffled: Vec<EncodedDocument> = order.iter().map(|&i| train_docs[i].clone()).collect();
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in model.batches(&shuffled, cfg.batch_size) {
            let mut g = Graph::new();
            let out = model.forward(&mut g, &model.params, &batch, true, rng)?;
            let loss = g.bce_with_logits(out.logits, &batch.labels)?;
            let grads = g.backward(loss)?;
            let grads = g.param_grads(&grads);
            adam.step(&mut model.params, &grads)?;
            loss_sum += g.value(loss).item() * batch.len() as f64;
            seen += batch.len();
        }

        let preds = model.predict(validation, cfg.batch_size)?;
        let report = MetricsReport::compute(&preds, cfg.calibration_bins)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            validation: report,
        };
        log::info!("{}", metrics.tsv_line());
        on_epoch(&metrics);
        let auc = metrics.validation.auc_roc;
        if best.as_ref().is_none_or(|(_, b, _)| auc > *b) {
            best = Some((epoch, auc, model.clone()));
        }
        history.push(metrics);
    }

    let (best_epoch, _, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best_epoch,
        history,
        best,
        last: model,
    })
}
