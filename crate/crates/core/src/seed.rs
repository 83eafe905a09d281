//! Deterministic seed derivation.
//!
//! Every random stream in a run is addressed by a master seed plus a small
//! tuple of tags (purpose, client id, round, ...). The tags are packed
//! directly into a ChaCha seed, so the stream for a given address never
//! depends on how many other streams were drawn before it or on thread
//! scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose tags used as the first derivation tag.
pub mod purpose {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SELECTION: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const REPETITION: u64 = 7;
}

/// Build an RNG addressed by `seed` and up to three tags. Callers use a fixed
/// tag arity per purpose, so missing trailing tags read as zero.
pub fn derive_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    assert!(tags.len() <= 3, "at most three derivation tags");
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    for (slot, tag) in tags.iter().enumerate() {
        let start = 8 * (slot + 1);
        bytes[start..start + 8].copy_from_slice(&tag.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// A child seed addressed by `seed` and `tags`.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    derive_rng(seed, tags).next_u64()
}
