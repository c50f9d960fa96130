//! TOML experiment configuration. Unknown keys anywhere are errors.

use std::path::{Path, PathBuf};

use reset_opt::data::NoiseSpec;
use reset_opt::nn::NetworkSpec;
use reset_opt::train::{CheckpointPolicy, ResetSections, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Runs use seeds `seed_base .. seed_base + repetitions`.
    #[serde(default = "one")]
    pub repetitions: u64,
    #[serde(default)]
    pub seed_base: u64,
    pub data: Option<DataConfig>,
    pub network: Option<NetworkConfig>,
    pub train: Option<TrainConfig>,
    pub sweep: Option<SweepConfig>,
    pub diagnose: Option<DiagnoseConfig>,
    pub mfpt: Option<MfptConfig>,
}

fn one() -> u64 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Blobs,
    Cifar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub blobs: Option<BlobsConfig>,
    pub cifar: Option<CifarConfig>,
    pub noise: NoiseSpec,
    /// Fraction of the non-test data held out for validation.
    pub val_fraction: f64,
    /// Corrupt validation labels with the same noise spec.
    #[serde(default)]
    pub corrupt_validation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsConfig {
    pub classes: usize,
    /// Training + validation samples per class.
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CifarConfig {
    pub train_files: Vec<PathBuf>,
    pub test_files: Vec<PathBuf>,
    #[serde(default = "ten")]
    pub num_classes: usize,
    /// Per-channel standardization fitted on the training split.
    #[serde(default = "yes")]
    pub standardize: bool,
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Fcn,
    SmallCnn,
    Vcnn,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub preset: Preset,
    #[serde(default = "fifty")]
    pub hidden: usize,
    #[serde(default = "yes")]
    pub batch_norm: bool,
    /// Layer list for `preset = "custom"`.
    pub spec: Option<NetworkSpec>,
}

fn fifty() -> usize {
    50
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    R,
    BatchSize,
    Tau,
    CheckpointOffset,
    Epsilon,
    SectionMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    /// Outer axis values; unused for `axis = "r"`.
    #[serde(default)]
    pub values: Vec<toml::Value>,
    /// Reset probabilities swept at every outer value; must contain 0.
    pub r_values: Vec<f64>,
    /// Also write each run's metrics table.
    #[serde(default)]
    pub write_metrics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// Recording period in iterations (a multiple of the validation interval).
    pub every: u64,
    #[serde(default = "samples")]
    pub diffusion_samples: usize,
    #[serde(default = "window")]
    pub smoothing_window: usize,
    /// Also emit train-mode (batch statistics, dropout on) decompositions.
    #[serde(default)]
    pub train_mode: bool,
    /// Run every seed with and without batch norm.
    #[serde(default)]
    pub batch_norm_pair: bool,
    #[serde(default = "chunk")]
    pub chunk: usize,
}

fn samples() -> usize {
    256
}

fn window() -> usize {
    50
}

fn chunk() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfptConfig {
    pub diffusion: Vec<f64>,
    pub drift: Vec<f64>,
    #[serde(default = "unit")]
    pub target: f64,
    pub gammas: Vec<f64>,
    pub trajectories: usize,
    /// Absolute step; default `time_step_scale * L^2 / D`.
    pub time_step: Option<f64>,
    #[serde(default = "milli")]
    pub time_step_scale: f64,
    /// Required for curves whose closed-form MFPT is infinite.
    pub max_time: Option<f64>,
    #[serde(default = "yes")]
    pub bridge_correction: bool,
}

fn unit() -> f64 {
    1.0
}

fn milli() -> f64 {
    1e-3
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::error::CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            crate::error::CliError::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Canonical text form: defaults filled in, fixed key order.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repetitions).map(|i| self.seed_base + i).collect()
    }

    pub fn data(&self) -> Result<&DataConfig> {
        self.data.as_ref().ok_or_else(|| config_err("missing [data] section"))
    }

    pub fn network(&self) -> Result<&NetworkConfig> {
        self.network.as_ref().ok_or_else(|| config_err("missing [network] section"))
    }

    pub fn train(&self) -> Result<&TrainConfig> {
        self.train.as_ref().ok_or_else(|| config_err("missing [train] section"))
    }

    /// Checks the sections a training-type command needs.
    pub fn validate_training(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(config_err("repetitions must be >= 1"));
        }
        let d = self.data()?;
        match d.source {
            DataSource::Blobs if d.blobs.is_none() => return Err(config_err("source = \"blobs\" needs [data.blobs]")),
            DataSource::Cifar if d.cifar.is_none() => return Err(config_err("source = \"cifar\" needs [data.cifar]")),
            _ => {}
        }
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            return Err(config_err(format!("data.val_fraction {} outside (0, 1)", d.val_fraction)));
        }
        let n = self.network()?;
        if n.preset == Preset::Custom && n.spec.is_none() {
            return Err(config_err("preset = \"custom\" needs [network.spec]"));
        }
        self.train()?.validate()?;
        Ok(())
    }
}

/// One point of a sweep axis.
#[derive(Debug, Clone, PartialEq)]
pub enum AxisValue {
    None,
    Real(f64),
    Int(u64),
    Sections(ResetSections),
}

impl std::fmt::Display for AxisValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AxisValue::None => Ok(()),
            AxisValue::Real(v) => write!(f, "{v}"),
            AxisValue::Int(v) => write!(f, "{v}"),
            AxisValue::Sections(s) => write!(f, "{}", match s {
                ResetSections::All => "all",
                ResetSections::Former => "former",
                ResetSections::Latter => "latter",
            }),
        }
    }
}

impl SweepConfig {
    pub fn axis_values(&self) -> Result<Vec<AxisValue>> {
        if self.r_values.is_empty() || !self.r_values.contains(&0.0) {
            return Err(config_err("sweep.r_values must include the r = 0 baseline"));
        }
        if self.axis == SweepAxis::R {
            if !self.values.is_empty() {
                return Err(config_err("sweep.values is unused for axis = \"r\"; list rates in r_values"));
            }
            return Ok(vec![AxisValue::None]);
        }
        if self.values.is_empty() {
            return Err(config_err("sweep.values must not be empty"));
        }
        self.values
            .iter()
            .map(|v| {
                let bad = || config_err(format!("sweep value {v} does not fit axis {:?}", self.axis));
                Ok(match self.axis {
                    SweepAxis::BatchSize | SweepAxis::CheckpointOffset => {
                        AxisValue::Int(v.as_integer().filter(|&i| i > 0).ok_or_else(bad)? as u64)
                    }
                    SweepAxis::Tau | SweepAxis::Epsilon => AxisValue::Real(
                        v.as_float().or_else(|| v.as_integer().map(|i| i as f64)).ok_or_else(bad)?,
                    ),
                    SweepAxis::SectionMask => AxisValue::Sections(match v.as_str().ok_or_else(bad)? {
                        "all" => ResetSections::All,
                        "former" => ResetSections::Former,
                        "latter" => ResetSections::Latter,
                        _ => return Err(bad()),
                    }),
                    SweepAxis::R => unreachable!(),
                })
            })
            .collect()
    }
}

impl ExperimentConfig {
    /// Copy of this config at one sweep point.
    pub fn at_point(&self, axis: SweepAxis, value: &AxisValue, r: f64) -> Result<Self> {
        let mut c = self.clone();
        c.sweep = None;
        let train = c.train.as_mut().ok_or_else(|| config_err("missing [train] section"))?;
        train.reset.reset_probability = r;
        match (axis, value) {
            (SweepAxis::R, _) => {}
            (SweepAxis::BatchSize, AxisValue::Int(b)) => train.batch_size = *b as usize,
            (SweepAxis::CheckpointOffset, AxisValue::Int(i)) => {
                train.reset.checkpoint = CheckpointPolicy::AtIteration { iteration: *i }
            }
            (SweepAxis::Epsilon, AxisValue::Real(e)) => train.reset.perturbation_eps = *e,
            (SweepAxis::SectionMask, AxisValue::Sections(s)) => train.reset.sections = *s,
            (SweepAxis::Tau, AxisValue::Real(t)) => {
                c.data.as_mut().ok_or_else(|| config_err("missing [data] section"))?.noise.rate = *t
            }
            _ => return Err(config_err("sweep value does not match axis")),
        }
        Ok(c)
    }
}
