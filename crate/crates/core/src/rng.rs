//! Deterministic random streams.
//!
//! Every Monte Carlo replicate draws from its own ChaCha stream addressed by
//! `(master seed, replicate index)`, so results do not depend on how the
//! replicates are scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream for replicate `index` under `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Stream used by single-shot simulations (stream 0 of `seed`).
pub fn seeded_rng(seed: u64) -> StreamRng {
    replicate_rng(seed, 0)
}

/// SplitMix64 finalizer; turns `(seed, index)` into a well-mixed child seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
