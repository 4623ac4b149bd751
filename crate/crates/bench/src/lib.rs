//! Shared inputs for the benchmarks.

use pfdiff_core::score::presets;
use pfdiff_core::{ChainNoise, NoiseSchedule, ScoreModel, States};

pub fn model(preset: &str) -> ScoreModel {
    ScoreModel::new(presets::source(preset).expect("known preset"), NoiseSchedule::default())
}

/// Seeded standard-normal starting states.
pub fn start(chains: usize, dim: usize) -> States {
    ChainNoise::new(0, chains).standard_normal(dim)
}
