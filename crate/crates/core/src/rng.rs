//! Seed derivation and generator construction.
//!
//! Every random stream in the crate is a `ChaCha8Rng`. Per-run seeds are a
//! SplitMix64 hash of `(master_seed, run_index)`, so the stream a run sees does
//! not depend on which thread executes it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream used for trajectory sampling.
pub const TRAJECTORY_STREAM: u64 = 0;
/// Stream used for algorithm-internal randomness (CTD anchor draws).
pub const ALGORITHM_STREAM: u64 = 1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for run `index` of an experiment started from `master`.
pub fn run_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Derive a child seed for a named purpose (e.g. feature sampling) from a seed.
pub fn child_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Generator on a given stream of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
