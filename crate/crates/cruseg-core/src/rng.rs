//! Seed derivation helpers.
//!
//! Every random decision in the engine (weight init, dropout masks, shuffles,
//! synthetic geometry) draws from a ChaCha stream seeded through these mixers,
//! so independent consumers get decorrelated streams from one user-facing seed
//! and results are reproducible across platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and one tag.
pub fn mix2(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag)
}

/// Derive a child seed from a parent seed and two tags.
pub fn mix3(seed: u64, tag_a: u64, tag_b: u64) -> u64 {
    splitmix64(mix2(seed, tag_a) ^ splitmix64(tag_b))
}

/// FNV-1a over a string, for name-keyed seed streams.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// The engine's stream cipher RNG, seeded from a mixed seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
