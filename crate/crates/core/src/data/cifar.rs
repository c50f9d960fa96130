use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = CIFAR_CHANNELS * CIFAR_SIDE * CIFAR_SIDE;
/// One label byte followed by three 32×32 planes.
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_PIXELS;

/// Reads CIFAR-style binary batches into an `N × 3 × 32 × 32` dataset with
/// pixels scaled to `[0, 1]`. Labels are clean.
pub fn load_cifar_binary<P: AsRef<Path>>(
    paths: &[P],
    num_classes: usize,
    standardize: bool,
) -> Result<LabeledDataset> {
    let mut bytes_all = Vec::new();
    for p in paths {
        let bytes = std::fs::read(p.as_ref())?;
        if bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(Error::Format(format!(
                "{}: {} bytes is not a multiple of {CIFAR_RECORD_BYTES}",
                p.as_ref().display(),
                bytes.len()
            )));
        }
        bytes_all.push(bytes);
    }
    parse_records(bytes_all.iter().map(Vec::as_slice), num_classes, standardize)
}

/// Parses in-memory record buffers; see [`load_cifar_binary`].
pub fn parse_records<'a>(
    buffers: impl IntoIterator<Item = &'a [u8]>,
    num_classes: usize,
    standardize: bool,
) -> Result<LabeledDataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for buf in buffers {
        if buf.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(Error::Format(format!(
                "truncated record: {} bytes",
                buf.len()
            )));
        }
        for rec in buf.chunks_exact(CIFAR_RECORD_BYTES) {
            let y = rec[0] as usize;
            if y >= num_classes {
                return Err(Error::Format(format!(
                    "label byte {y} not below {num_classes}"
                )));
            }
            labels.push(y);
            data.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    if labels.is_empty() {
        return Err(Error::Format("no records".into()));
    }
    let n = labels.len();
    let mut x = Tensor::new(vec![n, CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE], data)?;
    if standardize {
        Standardizer::fit(&x)?.apply(&mut x)?;
    }
    LabeledDataset::clean(x, labels, num_classes)
}

/// Per-channel affine standardization. Fit on the training split only, then
/// apply to every split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

// Channels with (near) zero spread are only centered.
const MIN_STD: f64 = 1e-8;

impl Standardizer {
    /// Channel = axis 1 for rank ≥ 3 tensors, each feature for `N × p`.
    pub fn fit(x: &Tensor) -> Result<Self> {
        let (channels, plane) = layout(x)?;
        let n = x.rows();
        let mut mean = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        for i in 0..n {
            for (c, chunk) in x.row(i).chunks_exact(plane).enumerate() {
                for &v in chunk {
                    mean[c] += v;
                }
            }
        }
        let count = (n * plane) as f64;
        for m in &mut mean {
            *m /= count;
        }
        for i in 0..n {
            for (c, chunk) in x.row(i).chunks_exact(plane).enumerate() {
                for &v in chunk {
                    sq[c] += (v - mean[c]).powi(2);
                }
            }
        }
        let std = sq.into_iter().map(|s| (s / count).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &mut Tensor) -> Result<()> {
        let (channels, plane) = layout(x)?;
        if channels != self.mean.len() {
            return Err(Error::dim(format!(
                "standardizer fitted on {} channels, tensor has {channels}",
                self.mean.len()
            )));
        }
        for chunk in x.data_mut().chunks_exact_mut(plane * channels) {
            for (c, plane_vals) in chunk.chunks_exact_mut(plane).enumerate() {
                let s = if self.std[c] > MIN_STD { self.std[c] } else { 1.0 };
                for v in plane_vals {
                    *v = (*v - self.mean[c]) / s;
                }
            }
        }
        Ok(())
    }
}

fn layout(x: &Tensor) -> Result<(usize, usize)> {
    match x.shape() {
        [_, p] => Ok((*p, 1)),
        [_, c, rest @ ..] if !rest.is_empty() => Ok((*c, rest.iter().product())),
        s => Err(Error::dim(format!("cannot standardize shape {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend((0..CIFAR_PIXELS).map(fill));
        r
    }

    #[test]
    fn single_record() {
        let r = record(3, |i| (i % 256) as u8);
        let ds = parse_records([r.as_slice()], 10, false).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.features().shape(), &[1, 3, 32, 32]);
        assert_eq!(ds.true_labels(), &[3]);
        assert_eq!(ds.features().data()[255], 1.0);
        // plane-major: pixel 1024 is the first green value
        assert_eq!(ds.features().data()[1024], (1024 % 256) as f64 / 255.0);
    }

    #[test]
    fn all_zero_standardized_equal() {
        let buf: Vec<u8> = (0..4).flat_map(|k| record(k, |_| 0)).collect();
        let ds = parse_records([buf.as_slice()], 10, true).unwrap();
        let first = ds.features().data()[0];
        assert!(ds.features().data().iter().all(|&v| v == first));
    }

    #[test]
    fn histogram_of_ten_labels() {
        let buf: Vec<u8> = (0..10).flat_map(|k| record(k, |i| (i * k as usize) as u8)).collect();
        let ds = parse_records([buf.as_slice()], 10, true).unwrap();
        assert_eq!(ds.class_counts(), vec![1; 10]);
    }

    #[test]
    fn format_errors() {
        let mut r = record(0, |_| 1);
        r.pop();
        assert!(matches!(parse_records([r.as_slice()], 10, false), Err(Error::Format(_))));
        let bad = record(10, |_| 1);
        assert!(matches!(parse_records([bad.as_slice()], 10, false), Err(Error::Format(_))));
    }

    #[test]
    fn standardized_channels_have_unit_spread() {
        let buf: Vec<u8> = (0..6)
            .flat_map(|k| record(k % 2, |i| ((i * 7 + k as usize * 13) % 256) as u8))
            .collect();
        let ds = parse_records([buf.as_slice()], 2, true).unwrap();
        let refit = Standardizer::fit(ds.features()).unwrap();
        for c in 0..3 {
            assert!(refit.mean[c].abs() < 1e-12);
            assert!((refit.std[c] - 1.0).abs() < 1e-12);
        }
    }
}
