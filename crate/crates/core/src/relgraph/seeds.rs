//! Deterministic derivation of independent rng streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a global seed with a stream key.
pub fn derive_seed(global: u64, key: u64) -> u64 {
    mix64(mix64(global) ^ key.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn stream(global: u64, key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global, key))
}

/// Seed of the sub-stream `name` under a root seed (FNV-1a of the name as
/// key).
pub fn named(root: u64, name: &str) -> u64 {
    let key = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    derive_seed(root, key)
}
