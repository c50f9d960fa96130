use std::io::Write;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Network, ParamSet, RunningStats};

/// Fraction of corrupted samples predicted as their true label; `None`
/// when nothing is corrupted.
pub fn memorization_fraction(
    net: &Network,
    params: &ParamSet,
    stats: &RunningStats,
    ds: &LabeledDataset,
    chunk: usize,
) -> Result<Option<f64>> {
    let idx = ds.corrupted_indices();
    if idx.is_empty() {
        return Ok(None);
    }
    let x = ds.features().select_rows(&idx)?;
    let pred = net.predict(params, stats, &x, chunk)?;
    let hits = pred
        .iter()
        .zip(&idx)
        .filter(|(p, &i)| **p == ds.true_labels()[i])
        .count();
    Ok(Some(hits as f64 / idx.len() as f64))
}

/// `(value - baseline) / baseline`.
pub fn relative_difference(value: f64, baseline: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::arg("baseline is zero"));
    }
    Ok((value - baseline) / baseline)
}

/// One validation-point record of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    /// Mean minibatch loss (observed labels) since the previous row.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Accuracy against the true labels of the test split.
    pub test_accuracy: f64,
    pub memorization_fraction: Option<f64>,
    /// A reset happened since the previous row.
    pub reset_event: bool,
    pub checkpoint_updated: bool,
}

pub const METRICS_HEADER: [&str; 8] = [
    "iteration",
    "train_loss",
    "val_loss",
    "val_acc",
    "test_acc",
    "mem_frac",
    "reset_event",
    "ckpt_updated",
];

/// CSV with an optional leading `# ...` comment line. Missing memorization
/// values are written as empty fields.
pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[MetricsRow], comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(METRICS_HEADER)?;
    for r in rows {
        wr.write_record([
            r.iteration.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.val_accuracy.to_string(),
            r.test_accuracy.to_string(),
            r.memorization_fraction.map(|m| m.to_string()).unwrap_or_default(),
            u8::from(r.reset_event).to_string(),
            u8::from(r.checkpoint_updated).to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
