//! Seeded synthetic regression data with a planted signal.

use kgmcq_core::signals::SIGNAL_COUNT;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{build_dataset, RawRow};
use crate::{LabeledDataset, ModelError};

/// Target used by [`planted_dataset`]; only the first three inputs matter.
pub fn planted_target(x: &[f64]) -> f64 {
    0.1 + 0.4 * x[0] + 0.3 * x[1] * x[1] + if x[2] > 0.5 { 0.2 } else { 0.0 }
}

/// `n` rows of uniform features in [0, 1] with labels
/// `clamp(planted_target(x) + N(0, noise), 0, 1)`.
pub fn planted_rows(n: usize, noise: f64, seed: u64) -> Vec<RawRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(0.0)).expect("finite noise");
    (0..n)
        .map(|i| {
            let mut raw = [0.0; SIGNAL_COUNT];
            raw.iter_mut().for_each(|v| *v = rng.gen::<f64>());
            let y = planted_target(&raw) + normal.sample(&mut rng);
            RawRow { mcq_id: format!("syn-{i:04}"), raw, difficulty: y.clamp(0.0, 1.0), liking: None, responses: None }
        })
        .collect()
}

pub fn planted_dataset(n: usize, noise: f64, seed: u64) -> Result<LabeledDataset, ModelError> {
    build_dataset(&planted_rows(n, noise, seed), None)
}
