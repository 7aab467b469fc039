//! Small paired datasets and trained models shared by the pipeline tests.

use maskrestore::degrade::{make_pair_batch, DegradationKind, Sampler};
use maskrestore::pipeline::{samples, Sample};
use maskrestore::rng::{derive, Purpose};

pub const SIZE: usize = 32;

/// `n` pairs for `seed` with kinds drawn from `kinds` at their default
/// parameter ranges. `offset` separates train from held-out scenes.
pub fn pairs(seed: u64, offset: u64, n: usize, kinds: &[DegradationKind]) -> Vec<Sample> {
    let seeds: Vec<u64> = (0..n as u64).map(|i| derive(seed, Purpose::CleanImage, offset + i)).collect();
    let mix: Vec<Sampler> = kinds.iter().map(|&k| Sampler::default_for(k)).collect();
    samples(&make_pair_batch(&seeds, &mix, SIZE).expect("pairs"))
}

pub const SEEN: [DegradationKind; 3] = [
    DegradationKind::GaussianNoise,
    DegradationKind::GaussianBlur,
    DegradationKind::Jpeg,
];

pub fn noise_set(seed: u64, n: usize) -> Vec<Sample> {
    pairs(seed, 0, n, &[DegradationKind::GaussianNoise])
}
