//! Seeded synthetic benchmark data.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::neuralnet::LabeledDataset;

/// Two interleaved half circles in 2D with Gaussian noise, one-hot labelled.
/// Samples alternate between the classes, so `n` even gives a balanced set.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    let normal = Normal::new(0.0, noise).map_err(|e| Error::Config(format!("noise {noise}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let t = rng.gen_range(0.0..=PI);
        let (x, y) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        inputs.push(vec![x + normal.sample(&mut rng), y + normal.sample(&mut rng)]);
        classes.push(class);
    }
    LabeledDataset::from_classes(inputs, &classes, 2)
}
