use rand::seq::index::sample;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{LossKind, Network, ParamSet, Pass, RunningStats};
use crate::par::Execution;
use crate::rng::{stream_rng, Stream};

/// Trace of the per-sample gradient covariance and the implied diffusion
/// scale `trace_D = lr * trace_Sigma / (2 B)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionEstimate {
    pub trace_sigma: f64,
    pub trace_d: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub num_samples: usize,
}

impl DiffusionEstimate {
    pub fn with_batch_size(self, batch_size: usize) -> Self {
        Self {
            trace_d: self.learning_rate * self.trace_sigma / (2.0 * batch_size as f64),
            batch_size,
            ..self
        }
    }
}

/// Estimates `trace Sigma` from `sample_count` per-sample gradients (eval
/// mode, unbiased variance per coordinate). Uses the whole dataset when
/// `sample_count >= N`, otherwise a seeded subset without replacement.
#[allow(clippy::too_many_arguments)]
pub fn estimate_diffusion(
    net: &Network,
    params: &ParamSet,
    stats: &RunningStats,
    ds: &LabeledDataset,
    loss: LossKind,
    learning_rate: f64,
    batch_size: usize,
    sample_count: usize,
    seed: u64,
    exec: Execution,
) -> Result<DiffusionEstimate> {
    if sample_count < 2 || ds.len() < 2 {
        return Err(Error::arg("need at least two samples"));
    }
    if batch_size == 0 {
        return Err(Error::arg("batch size must be positive"));
    }
    let idx: Vec<usize> = if sample_count >= ds.len() {
        (0..ds.len()).collect()
    } else {
        let mut rng = stream_rng(seed, Stream::Diagnostics, 1);
        let mut v = sample(&mut rng, ds.len(), sample_count).into_vec();
        v.sort_unstable();
        v
    };
    let x = ds.features().select_rows(&idx)?;
    let y: Vec<usize> = idx.iter().map(|&i| ds.noisy_labels()[i]).collect();
    let per = net.per_sample_grads(params, stats, &x, &y, loss, Pass::eval(), exec)?;
    let n = per.len() as f64;
    let d = net.total_dim();
    let mut mean = vec![0.0; d];
    for g in &per {
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut ss = 0.0;
    for g in &per {
        ss += g.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>();
    }
    let trace_sigma = ss / (n - 1.0);
    Ok(DiffusionEstimate {
        trace_sigma,
        trace_d: learning_rate * trace_sigma / (2.0 * batch_size as f64),
        batch_size,
        learning_rate,
        num_samples: per.len(),
    })
}

/// Mean of `lr * |g_full - g_batch|^2` over `batches` with-replacement
/// minibatches: the empirical `E|xi|^2`, which equals `2 trace_D` up to the
/// finite-population factor `(N-1)/N`. Eval mode throughout.
#[allow(clippy::too_many_arguments)]
pub fn minibatch_noise_energy(
    net: &Network,
    params: &ParamSet,
    stats: &RunningStats,
    ds: &LabeledDataset,
    loss: LossKind,
    learning_rate: f64,
    batch_size: usize,
    batches: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if batches < 2 {
        return Err(Error::arg("need at least two batches"));
    }
    let full = net
        .loss_and_grad(params, stats, ds.features(), ds.noisy_labels(), loss, Pass::eval())?
        .grad;
    let mut sampler = crate::data::BatchSampler::new(
        batch_size,
        crate::rng::derive_seed(seed, Stream::Diagnostics),
        crate::data::SamplingMode::WithReplacement,
    )?;
    let mut energies = Vec::with_capacity(batches);
    for _ in 0..batches {
        let idx = sampler.sample_batch(ds.len())?;
        let x = ds.features().select_rows(&idx)?;
        let y: Vec<usize> = idx.iter().map(|&i| ds.noisy_labels()[i]).collect();
        let g = net.loss_and_grad(params, stats, &x, &y, loss, Pass::eval())?.grad;
        energies.push(learning_rate * full.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
    }
    let n = energies.len() as f64;
    let mean = energies.iter().sum::<f64>() / n;
    let var = energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}
