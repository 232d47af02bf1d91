//! Deterministic counter-keyed random streams.
//!
//! Every stochastic routine derives its randomness from a key built out of a
//! user seed, a short role tag, and integer counters (iteration, sample
//! index, draw index, ...) instead of advancing one shared generator. Two
//! calls with the same key replay the same draws no matter what ran in
//! between, which keeps fits bit-reproducible and lets an objective and its
//! gradient share identical imputations by construction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of the SplitMix64 output permutation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `(seed, role, counters...)` into a single well-scrambled 64-bit key.
pub fn stream_key(seed: u64, role: &str, counters: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x6A09_E667_F3BC_C908);
    for &b in role.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    for &c in counters {
        h = splitmix64(h ^ c);
    }
    h
}

/// A fresh ChaCha generator for the stream named by `(seed, role, counters)`.
pub fn stream_rng(seed: u64, role: &str, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, role, counters))
}

/// A single uniform draw in `[0, 1)` taken directly from the stream key.
///
/// Useful when a routine needs exactly one variate per counter tuple (for
/// example one coin flip per matrix entry) and a full generator would be
/// wasteful.
pub fn key_uniform(seed: u64, role: &str, counters: &[u64]) -> f64 {
    // Top 53 bits give a uniform dyadic rational in [0, 1).
    (stream_key(seed, role, counters) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
