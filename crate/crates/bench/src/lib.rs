//! Shared fixtures for the benchmarks.

use jplrdl_core::{LabeledDataset, Matrix, PlantedSubspaces, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// `G G^T + I/2` for a random square `G`.
pub fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let g = random(n, n, rng);
    &g * g.transpose() + Matrix::identity(n, n) * 0.5
}

/// Five planted classes in 30 dimensions, 10 samples each.
pub fn planted(train_per_class: usize) -> LabeledDataset {
    PlantedSubspaces {
        train_per_class,
        test_per_class: 0,
        ..PlantedSubspaces::default()
    }
    .generate()
    .expect("valid planted spec")
    .0
}

/// Settings that keep the training problems well posed on [`planted`] data.
pub fn planted_config() -> TrainConfig {
    TrainConfig {
        d: Some(12),
        beta: 5.0,
        lambda2: 0.01,
        ..TrainConfig::default()
    }
}
