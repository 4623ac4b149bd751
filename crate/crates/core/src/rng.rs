//! Per-chain random streams.
//!
//! Chain `c` of a run seeded with `seed` always reads from ChaCha8 stream `c`
//! of that seed, so a chain's draws do not depend on how many other chains run
//! alongside it or on how work is split across threads.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct ChainNoise {
    streams: Vec<ChaCha8Rng>,
}

impl ChainNoise {
    pub fn new(seed: u64, chains: usize) -> Self {
        Self::with_offset(seed, 0, chains)
    }

    /// Streams `first..first + chains`; lets a large run be split into blocks
    /// that reproduce the unsplit draws exactly.
    pub fn with_offset(seed: u64, first: usize, chains: usize) -> Self {
        let streams = (first..first + chains)
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c as u64);
                rng
            })
            .collect();
        Self { streams }
    }

    pub fn chains(&self) -> usize {
        self.streams.len()
    }

    /// One standard-normal `dim`-vector per chain, as rows.
    pub fn standard_normal(&mut self, dim: usize) -> Array2<f64> {
        let mut out = Array2::zeros((self.streams.len(), dim));
        for (mut row, rng) in out.rows_mut().into_iter().zip(self.streams.iter_mut()) {
            row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        }
        out
    }
}
