//! Seeded, platform-stable random streams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream keyed by
//! `(seed, purpose, index)`, so feature draws, label noise, tie-breaking and
//! bootstrap resampling never share state and a component can be replayed in
//! isolation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Features = 1,
    Noise = 2,
    TieBreak = 3,
    Bootstrap = 4,
    Retrain = 5,
}

const INDEX_BITS: u32 = 56;

/// Independent generator for `(seed, purpose, index)`. Only the low 56 bits
/// of `index` are used.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << INDEX_BITS) | (index & ((1 << INDEX_BITS) - 1)));
    rng
}

/// Derives a child seed; used where a component takes a plain `u64` seed.
pub fn derive_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    stream(seed, purpose, index).next_u64()
}
