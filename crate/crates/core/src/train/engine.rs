use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{BatchSampler, LabeledDataset, SamplingMode};
use crate::error::{Error, Result};
use crate::nn::{LossKind, Network, ParamSet, Pass, RunningStats};
use crate::rng::{stream_rng, Stream};
use crate::train::{memorization_fraction, MetricsRow, ResetConfig, TrainState};

/// Multiply the learning rate by `factor` every `every` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    pub every: u64,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    pub batch_size: usize,
    pub total_iters: u64,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default)]
    pub lr_decay: Option<StepDecay>,
    #[serde(default)]
    pub reset: ResetConfig,
    /// Rows per evaluation chunk.
    #[serde(default = "default_chunk")]
    pub eval_chunk: usize,
}

fn default_chunk() -> usize {
    512
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.reset.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.total_iters < self.reset.validation_interval {
            return Err(Error::Config(
                "total_iters must be at least one validation interval".into(),
            ));
        }
        if let Some(d) = self.lr_decay {
            if d.every == 0 || !(d.factor > 0.0 && d.factor.is_finite()) {
                return Err(Error::Config("lr decay needs every >= 1 and factor > 0".into()));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        match self.lr_decay {
            Some(d) => self.lr * d.factor.powi((iteration / d.every) as i32),
            None => self.lr,
        }
    }
}

/// Hook called after every validation point.
pub trait Observer {
    fn on_validation(&mut self, net: &Network, state: &TrainState, row: &MetricsRow) -> Result<()>;
}

pub struct NoObserver;

impl Observer for NoObserver {
    fn on_validation(&mut self, _: &Network, _: &TrainState, _: &MetricsRow) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// Stopped at `iteration` on a non-finite loss or gradient; metrics up
    /// to that point are kept.
    Diverged { iteration: u64, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ParamSet,
    pub best_running: RunningStats,
    pub best_metric: Option<f64>,
    pub best_iteration: u64,
    pub rows: Vec<MetricsRow>,
    pub resets: u64,
    pub status: RunStatus,
}

/// Runs SGD with stochastic resetting.
///
/// Each iteration: draw a batch, take the gradient against the observed
/// labels, update, then possibly reset. Every `validation_interval`
/// iterations the validation metric (against `val`'s observed labels) feeds
/// the checkpoint logic and a metrics row is appended. Every random draw is
/// keyed by `(seed, iteration)`.
pub fn train(
    net: &Network,
    train_ds: &LabeledDataset,
    val_ds: &LabeledDataset,
    test_ds: &LabeledDataset,
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn Observer,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    for (name, ds) in [("train", train_ds), ("validation", val_ds), ("test", test_ds)] {
        if ds.is_empty() {
            return Err(Error::arg(format!("{name} set is empty")));
        }
        if ds.feature_dim() != net.input_len() || ds.num_classes() != net.num_classes() {
            return Err(Error::dim(format!("{name} set does not match the network")));
        }
    }
    let mut state = TrainState::new(net.init_params(seed), net.init_running_stats(), seed);
    let mut sampler = BatchSampler::new(cfg.batch_size, seed, cfg.sampling)?;
    let momenta = net.bn_momenta();
    let mut rows = Vec::new();
    let mut resets = 0u64;
    let mut since_row = (0.0, 0usize, false);
    let interval = cfg.reset.validation_interval;
    let mut status = RunStatus::Completed;

    for t in 0..cfg.total_iters {
        let idx = sampler.batch_at(t, train_ds.len())?;
        let x = train_ds.features().select_rows(&idx)?;
        let y: Vec<usize> = idx.iter().map(|&i| train_ds.noisy_labels()[i]).collect();
        let dropout_seed = stream_rng(seed, Stream::Dropout, t).next_u64();
        let lg = net.loss_and_grad(&state.params, &state.running, &x, &y, cfg.loss, Pass::train(dropout_seed))?;
        if !lg.loss.is_finite() || lg.grad.iter().any(|g| !g.is_finite()) {
            status = RunStatus::Diverged {
                iteration: t,
                reason: format!("non-finite loss or gradient (loss = {})", lg.loss),
            };
            break;
        }
        state.running.absorb(&lg.batch_stats, &momenta);
        state.sgd_step(&lg.grad, cfg.lr_at(t), cfg.momentum)?;
        if state.maybe_reset(&cfg.reset) {
            resets += 1;
            since_row.2 = true;
        }
        since_row.0 += lg.loss;
        since_row.1 += 1;

        if state.iteration.is_multiple_of(interval) {
            let (val_loss, val_acc) = net.evaluate(
                &state.params,
                &state.running,
                val_ds.features(),
                val_ds.noisy_labels(),
                cfg.loss,
                cfg.eval_chunk,
            )?;
            if !val_loss.is_finite() {
                status = RunStatus::Diverged {
                    iteration: state.iteration,
                    reason: "non-finite validation loss".into(),
                };
                break;
            }
            let (_, test_acc) = net.evaluate(
                &state.params,
                &state.running,
                test_ds.features(),
                test_ds.true_labels(),
                cfg.loss,
                cfg.eval_chunk,
            )?;
            let mem = memorization_fraction(net, &state.params, &state.running, train_ds, cfg.eval_chunk)?;
            let metric = match cfg.reset.selection_metric {
                crate::train::SelectionMetric::ValLoss => val_loss,
                crate::train::SelectionMetric::ValAccuracy => val_acc,
            };
            let ev = state.validate_and_update_checkpoint(&cfg.reset, metric);
            let row = MetricsRow {
                iteration: state.iteration,
                train_loss: since_row.0 / since_row.1 as f64,
                val_loss,
                val_accuracy: val_acc,
                test_accuracy: test_acc,
                memorization_fraction: mem,
                reset_event: since_row.2,
                checkpoint_updated: ev.checkpoint_updated,
            };
            since_row = (0.0, 0, false);
            observer.on_validation(net, &state, &row)?;
            rows.push(row);
        }
    }

    let mut best = state.params.clone();
    best.assign(&state.best.values, None)?;
    Ok(TrainOutcome {
        best,
        best_running: state.best.running.clone(),
        best_metric: state.best_metric,
        best_iteration: state.best_iteration,
        rows,
        resets,
        status,
    })
}
