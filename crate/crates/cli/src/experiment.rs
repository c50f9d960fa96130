//! Building datasets and networks from a config, and single training runs.

use reset_opt::data::{corrupt, load_cifar_binary, make_blobs, split, LabeledDataset, Standardizer};
use reset_opt::nn::{Network, NetworkSpec};
use reset_opt::rng::splitmix64;
use reset_opt::train::{train, CheckpointPolicy, MetricsRow, Observer, ResetSections, RunStatus, TrainOutcome};
use serde::Serialize;

use crate::config::{DataSource, ExperimentConfig, Preset};
use crate::error::{config_err, Result};

/// Train / validation / test sets for one seed.
pub struct Datasets {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

/// Sub-seeds for the data pipeline, all derived from the run seed.
fn sub_seed(seed: u64, k: u64) -> u64 {
    splitmix64(seed.wrapping_mul(0x100).wrapping_add(k))
}

pub fn build_datasets(cfg: &ExperimentConfig, seed: u64) -> Result<Datasets> {
    let d = cfg.data()?;
    let (train, val, test) = match d.source {
        DataSource::Blobs => {
            let b = d.blobs.as_ref().ok_or_else(|| config_err("missing [data.blobs]"))?;
            if b.test_per_class == 0 || b.per_class < 2 {
                return Err(config_err("blobs need per_class >= 2 and test_per_class >= 1"));
            }
            let total = b.per_class + b.test_per_class;
            let full = make_blobs(b.classes, total, b.dim, b.separation, sub_seed(seed, 0))?;
            let (rest, test) = split(&full, b.test_per_class as f64 / total as f64, sub_seed(seed, 1))?;
            let (train, val) = split(&rest, d.val_fraction, sub_seed(seed, 2))?;
            (train, val, test)
        }
        DataSource::Cifar => {
            let c = d.cifar.as_ref().ok_or_else(|| config_err("missing [data.cifar]"))?;
            let all = load_cifar_binary(&c.train_files, c.num_classes, false)?;
            let mut test = load_cifar_binary(&c.test_files, c.num_classes, false)?;
            let (mut train, mut val) = split(&all, d.val_fraction, sub_seed(seed, 2))?;
            if c.standardize {
                let s = Standardizer::fit(train.features())?;
                s.apply(train.features_mut())?;
                s.apply(val.features_mut())?;
                s.apply(test.features_mut())?;
            }
            (train, val, test)
        }
    };
    let train = corrupt(&train, &d.noise, sub_seed(seed, 3))?;
    let val = if d.corrupt_validation {
        corrupt(&val, &d.noise, sub_seed(seed, 4))?
    } else {
        val
    };
    Ok(Datasets { train, val, test })
}

pub fn build_network(cfg: &ExperimentConfig) -> Result<Network> {
    let n = cfg.network()?;
    let d = cfg.data()?;
    let (input, classes) = match d.source {
        DataSource::Blobs => {
            let b = d.blobs.as_ref().ok_or_else(|| config_err("missing [data.blobs]"))?;
            (vec![b.dim], b.classes)
        }
        DataSource::Cifar => {
            let c = d.cifar.as_ref().ok_or_else(|| config_err("missing [data.cifar]"))?;
            (vec![3, 32, 32], c.num_classes)
        }
    };
    let spec = match n.preset {
        Preset::Fcn => NetworkSpec::fcn(input, n.hidden, classes, n.batch_norm),
        Preset::SmallCnn => NetworkSpec::small_cnn(classes, n.batch_norm),
        Preset::Vcnn => NetworkSpec::vcnn(classes),
        Preset::Custom => n.spec.clone().ok_or_else(|| config_err("preset = \"custom\" needs [network.spec]"))?,
    };
    Ok(Network::new(spec)?)
}

/// Per-seed outcome of one training run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub completed: bool,
    pub failure: Option<String>,
    pub best_val_loss: Option<f64>,
    pub best_val_accuracy: Option<f64>,
    pub best_iteration: u64,
    /// Clean-label test accuracy of the selected parameters.
    pub test_accuracy: Option<f64>,
    pub resets: u64,
    pub peak_mem_frac: Option<f64>,
    pub final_mem_frac: Option<f64>,
    #[serde(skip)]
    pub rows: Vec<MetricsRow>,
    #[serde(skip)]
    pub outcome: Option<TrainOutcome>,
}

/// Trains once. Divergence is recorded in the summary, not returned as an
/// error.
pub fn run_training(cfg: &ExperimentConfig, seed: u64, observer: &mut dyn Observer) -> Result<RunSummary> {
    let net = build_network(cfg)?;
    let ds = build_datasets(cfg, seed)?;
    run_prepared(cfg, &net, &ds, seed, observer)
}

/// As [`run_training`] with the network and datasets already built.
pub fn run_prepared(
    cfg: &ExperimentConfig,
    net: &Network,
    ds: &Datasets,
    seed: u64,
    observer: &mut dyn Observer,
) -> Result<RunSummary> {
    let train_cfg = cfg.train()?;
    let out = train(net, &ds.train, &ds.val, &ds.test, train_cfg, seed, observer)?;
    let chunk = train_cfg.eval_chunk;
    let (failure, completed) = match &out.status {
        RunStatus::Completed => (None, true),
        RunStatus::Diverged { iteration, reason } => (Some(format!("diverged at iteration {iteration}: {reason}")), false),
    };
    let (best_val_loss, best_val_accuracy, test_accuracy) = if out.rows.is_empty() {
        (None, None, None)
    } else {
        let (vl, va) = net.evaluate(&out.best, &out.best_running, ds.val.features(), ds.val.noisy_labels(), train_cfg.loss, chunk)?;
        let (_, ta) = net.evaluate(&out.best, &out.best_running, ds.test.features(), ds.test.true_labels(), train_cfg.loss, chunk)?;
        (Some(vl), Some(va), Some(ta))
    };
    let mems: Vec<f64> = out.rows.iter().filter_map(|r| r.memorization_fraction).collect();
    Ok(RunSummary {
        seed,
        completed,
        failure,
        best_val_loss,
        best_val_accuracy,
        best_iteration: out.best_iteration,
        test_accuracy,
        resets: out.resets,
        peak_mem_frac: mems.iter().cloned().reduce(f64::max),
        final_mem_frac: mems.last().copied(),
        rows: out.rows.clone(),
        outcome: Some(out),
    })
}

/// Key identifying a run up to settings that cannot affect it (reset
/// details are irrelevant at r = 0).
pub fn run_key(cfg: &ExperimentConfig, seed: u64) -> String {
    let mut c = cfg.clone();
    c.sweep = None;
    c.diagnose = None;
    c.mfpt = None;
    c.repetitions = 1;
    c.seed_base = 0;
    if let Some(t) = c.train.as_mut() {
        if t.reset.reset_probability == 0.0 {
            t.reset.perturbation_eps = 0.0;
            t.reset.sections = ResetSections::All;
            t.reset.checkpoint = CheckpointPolicy::Adaptive;
        }
    }
    format!("{seed}\n{}", c.canonical())
}
