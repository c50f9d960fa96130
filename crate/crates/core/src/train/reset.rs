use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamSet, RunningStats, SectionMask};
use crate::rng::{stream_rng, Stream};
use crate::train::sgd_step;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    ValLoss,
    ValAccuracy,
}

impl SelectionMetric {
    /// Strictly better; ties keep the earlier model.
    pub fn improves(self, candidate: f64, best: f64) -> bool {
        match self {
            SelectionMetric::ValLoss => candidate < best,
            SelectionMetric::ValAccuracy => candidate > best,
        }
    }
}

/// Which layer sections a reset overwrites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetSections {
    #[default]
    All,
    Former,
    Latter,
}

impl ResetSections {
    pub fn mask(self) -> SectionMask {
        match self {
            ResetSections::All => SectionMask::ALL,
            ResetSections::Former => SectionMask::FORMER,
            ResetSections::Latter => SectionMask::LATTER,
        }
    }
}

/// How the reset destination is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckpointPolicy {
    /// Arm after `patience` stale iterations, then follow every new best.
    #[default]
    Adaptive,
    /// Arm like `Adaptive` but never move afterwards.
    Fixed,
    /// Parameters at the given iteration (must be a validation point);
    /// never moves.
    AtIteration { iteration: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetConfig {
    /// Per-iteration reset probability `r`.
    pub reset_probability: f64,
    /// Stale iterations before the checkpoint arms.
    pub patience: u64,
    #[serde(default = "default_interval")]
    pub validation_interval: u64,
    #[serde(default)]
    pub sections: ResetSections,
    /// Norm of the random offset added to the checkpoint on each reset.
    #[serde(default)]
    pub perturbation_eps: f64,
    #[serde(default)]
    pub selection_metric: SelectionMetric,
    #[serde(default)]
    pub checkpoint: CheckpointPolicy,
}

fn default_interval() -> u64 {
    20
}

impl Default for ResetConfig {
    fn default() -> Self {
        Self {
            reset_probability: 0.0,
            patience: 1000,
            validation_interval: default_interval(),
            sections: ResetSections::All,
            perturbation_eps: 0.0,
            selection_metric: SelectionMetric::ValLoss,
            checkpoint: CheckpointPolicy::Adaptive,
        }
    }
}

impl ResetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.reset_probability) {
            return Err(Error::Config(format!(
                "reset probability {} outside [0, 1]",
                self.reset_probability
            )));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.validation_interval < 1 {
            return Err(Error::Config("validation interval must be >= 1".into()));
        }
        if !(self.perturbation_eps >= 0.0 && self.perturbation_eps.is_finite()) {
            return Err(Error::Config("perturbation eps must be finite and >= 0".into()));
        }
        if let CheckpointPolicy::AtIteration { iteration } = self.checkpoint {
            if iteration == 0 || iteration % self.validation_interval != 0 {
                return Err(Error::Config(format!(
                    "checkpoint iteration {iteration} is not a positive multiple of the validation interval"
                )));
            }
        }
        Ok(())
    }
}

/// Parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub values: Vec<f64>,
    pub running: RunningStats,
}

/// What a validation step changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CheckpointEvent {
    pub improved: bool,
    pub checkpoint_updated: bool,
}

/// Mutable state of one training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ParamSet,
    pub running: RunningStats,
    pub checkpoint: Option<Snapshot>,
    pub best: Snapshot,
    pub best_metric: Option<f64>,
    pub best_iteration: u64,
    pub iters_since_best: u64,
    /// Completed SGD steps.
    pub iteration: u64,
    pub momentum_buffer: Option<Vec<f64>>,
    pub seed: u64,
}

impl TrainState {
    pub fn new(params: ParamSet, running: RunningStats, seed: u64) -> Self {
        let best = Snapshot {
            values: params.flatten(),
            running: running.clone(),
        };
        Self {
            params,
            running,
            checkpoint: None,
            best,
            best_metric: None,
            best_iteration: 0,
            iters_since_best: 0,
            iteration: 0,
            momentum_buffer: None,
            seed,
        }
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            values: self.params.flatten(),
            running: self.running.clone(),
        }
    }

    pub fn sgd_step(&mut self, grad: &[f64], lr: f64, momentum: f64) -> Result<()> {
        sgd_step(
            self.params.values_mut(),
            &mut self.momentum_buffer,
            grad,
            lr,
            momentum,
        )?;
        self.iteration += 1;
        Ok(())
    }

    /// Records a validation result and moves best / checkpoint accordingly.
    pub fn validate_and_update_checkpoint(&mut self, cfg: &ResetConfig, metric: f64) -> CheckpointEvent {
        let mut ev = CheckpointEvent::default();
        let improved = match self.best_metric {
            None => true,
            Some(b) => cfg.selection_metric.improves(metric, b),
        };
        if improved {
            self.best = self.snapshot();
            self.best_metric = Some(metric);
            self.best_iteration = self.iteration;
            self.iters_since_best = 0;
            ev.improved = true;
        } else {
            self.iters_since_best += cfg.validation_interval;
        }
        match cfg.checkpoint {
            CheckpointPolicy::Adaptive | CheckpointPolicy::Fixed => {
                let arm = self.checkpoint.is_none() && self.iters_since_best >= cfg.patience;
                let follow = improved
                    && self.checkpoint.is_some()
                    && cfg.checkpoint == CheckpointPolicy::Adaptive;
                if arm || follow {
                    self.checkpoint = Some(self.best.clone());
                    ev.checkpoint_updated = true;
                }
            }
            CheckpointPolicy::AtIteration { iteration } => {
                if self.iteration == iteration {
                    self.checkpoint = Some(self.snapshot());
                    ev.checkpoint_updated = true;
                }
            }
        }
        ev
    }

    /// Bernoulli(r) restart to the checkpoint (plus an `eps`-sized random
    /// offset) on the configured sections. Momentum is left alone.
    pub fn maybe_reset(&mut self, cfg: &ResetConfig) -> bool {
        let r = cfg.reset_probability;
        if r <= 0.0 {
            return false;
        }
        let Some(ckpt) = &self.checkpoint else {
            return false;
        };
        let coin: f64 = stream_rng(self.seed, Stream::ResetCoin, self.iteration).random();
        if coin >= r {
            return false;
        }
        let mask = cfg.sections.mask();
        let ranges = self.params.masked_ranges(mask);
        let values = self.params.values_mut();
        for range in &ranges {
            values[range.clone()].copy_from_slice(&ckpt.values[range.clone()]);
        }
        if cfg.perturbation_eps > 0.0 {
            let mut rng = stream_rng(self.seed, Stream::Perturbation, self.iteration);
            let dims: usize = ranges.iter().map(|r| r.len()).sum();
            let n: Vec<f64> = (0..dims).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = n.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                let scale = cfg.perturbation_eps / norm;
                let mut k = 0;
                for range in &ranges {
                    for v in &mut values[range.clone()] {
                        *v += scale * n[k];
                        k += 1;
                    }
                }
            }
        }
        self.running.assign_from(&ckpt.running, mask);
        true
    }
}
