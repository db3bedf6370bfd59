//! Seeded randomness.
//!
//! Every stochastic routine in this crate draws from [`Rng`], a ChaCha8
//! stream cipher RNG: portable, platform-independent, and fully determined
//! by its 64-bit seed. Parallel sweeps never share a stream; each task
//! derives its own seed with [`derive_seed`] so results are identical
//! regardless of worker count or completion order.

use rand::SeedableRng;

/// The crate-wide RNG. ChaCha8 is the fixed algorithm; changing it would
/// change every seeded artifact, so it is part of the output format.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer. Stable scrambling for seed derivation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a tag sequence. Used to give
/// each (pair, seed, round, ...) task an independent stream: the mapping is
/// fixed, so a sweep produces the same per-task streams no matter how the
/// tasks are scheduled.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ t))
}
