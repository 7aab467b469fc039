//! Seeded random streams.
//!
//! There is no global generator. Every consumer derives its own ChaCha
//! stream from an explicit `(seed, purpose, index)` triple, so per-sample
//! work can run in any order or in parallel and still reproduce exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// What a random stream is used for. Distinct purposes never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    CleanImage = 2,
    Degradation = 3,
    DegradationChoice = 4,
    Mask = 5,
    Selection = 6,
    PathTimes = 7,
    Texture = 8,
    Batch = 9,
    Test = 10,
}

/// SplitMix64 finalizer; decorrelates nearby integers.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(purpose as u64)));
    rng.set_stream(mix(index));
    rng
}

/// Derives a child seed, e.g. a per-sample seed from a run seed.
pub fn derive(seed: u64, purpose: Purpose, index: u64) -> u64 {
    mix(mix(seed ^ mix(purpose as u64)) ^ mix(index.wrapping_add(0x5851_F42D)))
}
