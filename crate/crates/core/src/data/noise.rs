use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    /// Each label flips with probability `rate` to one of the other `c - 1`
    /// classes, uniformly.
    Symmetric,
    /// Each label flips with probability `rate` to `flip[class]`.
    Asymmetric { flip: Vec<usize> },
}

/// Serialized as `{ kind = "symmetric", rate }` or
/// `{ kind = "asymmetric", rate, flip = [...] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNoiseSpec", into = "RawNoiseSpec")]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindName {
    Symmetric,
    Asymmetric,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoiseSpec {
    kind: KindName,
    rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    flip: Option<Vec<usize>>,
}

impl TryFrom<RawNoiseSpec> for NoiseSpec {
    type Error = String;

    fn try_from(r: RawNoiseSpec) -> std::result::Result<Self, String> {
        let kind = match (r.kind, r.flip) {
            (KindName::Symmetric, None) => NoiseKind::Symmetric,
            (KindName::Symmetric, Some(_)) => return Err("symmetric noise takes no flip map".into()),
            (KindName::Asymmetric, Some(flip)) => NoiseKind::Asymmetric { flip },
            (KindName::Asymmetric, None) => return Err("asymmetric noise needs a flip map".into()),
        };
        Ok(Self { kind, rate: r.rate })
    }
}

impl From<NoiseSpec> for RawNoiseSpec {
    fn from(s: NoiseSpec) -> Self {
        match s.kind {
            NoiseKind::Symmetric => Self { kind: KindName::Symmetric, rate: s.rate, flip: None },
            NoiseKind::Asymmetric { flip } => Self { kind: KindName::Asymmetric, rate: s.rate, flip: Some(flip) },
        }
    }
}

impl NoiseSpec {
    pub fn symmetric(rate: f64) -> Self {
        Self {
            kind: NoiseKind::Symmetric,
            rate,
        }
    }

    /// Pair flips `k -> (k + 1) mod c`.
    pub fn pair_flip(classes: usize, rate: f64) -> Self {
        Self {
            kind: NoiseKind::Asymmetric {
                flip: (0..classes).map(|k| (k + 1) % classes).collect(),
            },
            rate,
        }
    }
}

/// Corrupts the observed labels of a clean dataset.
pub fn corrupt(ds: &LabeledDataset, spec: &NoiseSpec, seed: u64) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(Error::arg(format!("noise rate {} outside [0, 1]", spec.rate)));
    }
    if ds.true_labels() != ds.noisy_labels() {
        return Err(Error::arg("dataset is already corrupted"));
    }
    let c = ds.num_classes();
    if let NoiseKind::Asymmetric { flip } = &spec.kind {
        for &y in ds.true_labels() {
            match flip.get(y) {
                None => {
                    return Err(Error::Config(format!("flip map has no entry for class {y}")))
                }
                Some(&t) if t == y => {
                    return Err(Error::Config(format!("flip map sends class {y} to itself")))
                }
                Some(&t) if t >= c => {
                    return Err(Error::Config(format!("flip target {t} outside [0, {c})")))
                }
                _ => {}
            }
        }
    }
    let mut rng = stream_rng(seed, Stream::Noise, 0);
    let noisy = ds
        .true_labels()
        .iter()
        .map(|&y| {
            // one coin per label, drawn even at rate 0 or 1
            let flip_now = rng.random::<f64>() < spec.rate;
            match &spec.kind {
                NoiseKind::Symmetric => {
                    let other = rng.random_range(0..c - 1);
                    if flip_now {
                        if other >= y {
                            other + 1
                        } else {
                            other
                        }
                    } else {
                        y
                    }
                }
                NoiseKind::Asymmetric { flip } => {
                    if flip_now {
                        flip[y]
                    } else {
                        y
                    }
                }
            }
        })
        .collect();
    ds.with_noisy_labels(noisy)
}
