use std::io::Write;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{stream_rng, Stream};

/// Features with both the ground-truth and the observed (possibly
/// corrupted) label of every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Tensor,
    true_labels: Vec<usize>,
    noisy_labels: Vec<usize>,
    corrupted: Vec<bool>,
    num_classes: usize,
}

impl LabeledDataset {
    /// Builds a dataset; the corruption mask is derived from the labels.
    pub fn new(
        features: Tensor,
        true_labels: Vec<usize>,
        noisy_labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if true_labels.len() != n || noisy_labels.len() != n {
            return Err(Error::dim(format!(
                "{n} rows but {} true / {} noisy labels",
                true_labels.len(),
                noisy_labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::arg("need at least two classes"));
        }
        if true_labels.iter().chain(&noisy_labels).any(|&y| y >= num_classes) {
            return Err(Error::arg(format!("label outside [0, {num_classes})")));
        }
        let corrupted = true_labels
            .iter()
            .zip(&noisy_labels)
            .map(|(t, y)| t != y)
            .collect();
        Ok(Self {
            features,
            true_labels,
            noisy_labels,
            corrupted,
            num_classes,
        })
    }

    /// Clean dataset: observed labels equal the true ones.
    pub fn clean(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        Self::new(features, labels.clone(), labels, num_classes)
    }

    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut Tensor {
        &mut self.features
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    pub fn corrupted(&self) -> &[bool] {
        &self.corrupted
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.row_len()
    }

    /// Empirical noise rate `N^w / N`.
    pub fn corrupted_fraction(&self) -> f64 {
        self.corrupted.iter().filter(|&&c| c).count() as f64 / self.len().max(1) as f64
    }

    pub fn corrupted_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.corrupted[i]).collect()
    }

    pub fn correct_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.corrupted[i]).collect()
    }

    /// Returns a dataset with the given noisy labels (mask recomputed).
    pub fn with_noisy_labels(&self, noisy: Vec<usize>) -> Result<Self> {
        Self::new(
            self.features.clone(),
            self.true_labels.clone(),
            noisy,
            self.num_classes,
        )
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Self::new(
            self.features.select_rows(idx)?,
            idx.iter().map(|&i| self.true_labels[i]).collect(),
            idx.iter().map(|&i| self.noisy_labels[i]).collect(),
            self.num_classes,
        )
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.true_labels {
            counts[y] += 1;
        }
        counts
    }

    /// CSV with columns `true_label,noisy_label,corrupted,f_0..f_{p-1}`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let p = self.feature_dim();
        let mut header = vec![
            "true_label".to_string(),
            "noisy_label".to_string(),
            "corrupted".to_string(),
        ];
        header.extend((0..p).map(|j| format!("f_{j}")));
        wr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![
                self.true_labels[i].to_string(),
                self.noisy_labels[i].to_string(),
                self.corrupted[i].to_string(),
            ];
            rec.extend(self.features.row(i).iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Gaussian clusters with identity covariance.
///
/// When `dim >= classes` the centers are `separation/sqrt(2) * e_k`, so every
/// pair of centers is exactly `separation` apart. Otherwise centers are
/// random directions with the same norm. Samples are emitted class by class.
pub fn make_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 || per_class == 0 || dim == 0 {
        return Err(Error::arg("need classes >= 2, per_class >= 1, dim >= 1"));
    }
    if separation <= 0.0 || !separation.is_finite() {
        return Err(Error::arg("separation must be positive"));
    }
    let radius = separation / std::f64::consts::SQRT_2;
    let mut rng = stream_rng(seed, Stream::Data, 0);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|k| {
            if dim >= classes {
                let mut c = vec![0.0; dim];
                c[k] = radius;
                c
            } else {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| radius * x / norm).collect()
            }
        })
        .collect();
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (k, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for c in center {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(c + z);
            }
            labels.push(k);
        }
    }
    LabeledDataset::clean(Tensor::new(vec![n, dim], data)?, labels, classes)
}
