use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Independent uniform draws, the default.
    #[default]
    WithReplacement,
    /// Reshuffle once per pass over the data; batches may straddle epochs.
    EpochShuffle,
}

/// Minibatch index source. Batch `t` depends only on `(seed, t)` so runs
/// can be replayed from any counter value.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    batch_size: usize,
    seed: u64,
    counter: u64,
    mode: SamplingMode,
    epoch_cache: Option<(u64, Vec<usize>)>,
}

// Epoch permutations live on their own counter range of the batch stream.
const EPOCH_STREAM_OFFSET: u64 = 1 << 48;

impl BatchSampler {
    pub fn new(batch_size: usize, seed: u64, mode: SamplingMode) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        Ok(Self {
            batch_size,
            seed,
            counter: 0,
            mode,
            epoch_cache: None,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn set_counter(&mut self, counter: u64) {
        self.counter = counter;
    }

    /// Draws the next batch and advances the counter.
    pub fn sample_batch(&mut self, n: usize) -> Result<Vec<usize>> {
        let batch = self.batch_at(self.counter, n)?;
        self.counter += 1;
        Ok(batch)
    }

    /// Batch number `counter` without touching the sampler position.
    pub fn batch_at(&mut self, counter: u64, n: usize) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::arg("cannot sample from an empty dataset"));
        }
        match self.mode {
            SamplingMode::WithReplacement => {
                let mut rng = stream_rng(self.seed, Stream::Batch, counter);
                Ok((0..self.batch_size).map(|_| rng.random_range(0..n)).collect())
            }
            SamplingMode::EpochShuffle => {
                let start = counter * self.batch_size as u64;
                (0..self.batch_size as u64)
                    .map(|j| {
                        let q = start + j;
                        let epoch = q / n as u64;
                        Ok(self.permutation(epoch, n)[(q % n as u64) as usize])
                    })
                    .collect()
            }
        }
    }

    fn permutation(&mut self, epoch: u64, n: usize) -> &[usize] {
        let fresh = !matches!(&self.epoch_cache, Some((e, p)) if *e == epoch && p.len() == n);
        if fresh {
            let mut perm: Vec<usize> = (0..n).collect();
            let mut rng = stream_rng(self.seed, Stream::Batch, EPOCH_STREAM_OFFSET + epoch);
            perm.shuffle(&mut rng);
            self.epoch_cache = Some((epoch, perm));
        }
        &self.epoch_cache.as_ref().expect("cache filled above").1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_item() {
        let mut s = BatchSampler::new(1, 0, SamplingMode::WithReplacement).unwrap();
        assert_eq!(s.sample_batch(1).unwrap(), vec![0]);
    }

    #[test]
    fn replayable() {
        let mut a = BatchSampler::new(16, 7, SamplingMode::WithReplacement).unwrap();
        let first: Vec<_> = (0..5).map(|_| a.sample_batch(100).unwrap()).collect();
        let mut b = BatchSampler::new(16, 7, SamplingMode::WithReplacement).unwrap();
        b.set_counter(3);
        assert_eq!(b.sample_batch(100).unwrap(), first[3]);
        assert_ne!(first[0], first[1]);
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut s = BatchSampler::new(4, 0, SamplingMode::WithReplacement).unwrap();
        assert!(matches!(s.sample_batch(0), Err(Error::Argument(_))));
        assert!(BatchSampler::new(0, 0, SamplingMode::WithReplacement).is_err());
    }

    #[test]
    fn oversized_batch_allowed() {
        let mut s = BatchSampler::new(50, 1, SamplingMode::WithReplacement).unwrap();
        let b = s.sample_batch(3).unwrap();
        assert_eq!(b.len(), 50);
        assert!(b.iter().all(|&i| i < 3));
    }

    #[test]
    fn epoch_shuffle_covers_each_epoch() {
        let mut s = BatchSampler::new(7, 2, SamplingMode::EpochShuffle).unwrap();
        let n = 20;
        let draws: Vec<usize> = (0..20).flat_map(|_| s.sample_batch(n).unwrap()).collect();
        for epoch in draws.chunks(n).filter(|c| c.len() == n) {
            let mut e = epoch.to_vec();
            e.sort_unstable();
            assert_eq!(e, (0..n).collect::<Vec<_>>());
        }
    }
}
