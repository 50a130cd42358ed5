//! Reproducible random streams.
//!
//! Every replicate of a Monte Carlo loop draws from its own ChaCha stream
//! keyed by `(seed, replicate)`, so results do not depend on how replicates
//! are scheduled across threads.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as StreamRng;

/// Generator for replicate `replicate` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, replicate: u64) -> StreamRng {
    let mut rng = StreamRng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Derive an independent seed for a sub-experiment (e.g. one sample size).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
