use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Seeded random stream backed by ChaCha8.
///
/// ChaCha8 output is fixed by its reference definition, so a given seed
/// produces the same draw sequence on every platform. Child streams are
/// derived with [`RngStream::fork`], never by sharing a stream across threads.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream whose seed is a SplitMix64 mix of this
    /// stream's seed and `id`. Does not advance `self`.
    pub fn fork(&self, id: u64) -> Self {
        Self::new(splitmix64(self.seed ^ splitmix64(id.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal_draws(&mut self, n: usize, mean: f64, std: f64) -> Result<Vec<f64>> {
        if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::invalid(format!(
                "normal draws need finite mean and std >= 0, got mean={mean}, std={std}"
            )));
        }
        let dist = Normal::new(mean, std).map_err(|e| Error::invalid(e.to_string()))?;
        Ok((0..n).map(|_| dist.sample(&mut self.inner)).collect())
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        items.shuffle(&mut self.inner);
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
