//! Seeded randomness.
//!
//! Every stochastic component draws from ChaCha8 seeded by a 64-bit value.
//! Independent sub-streams come from ChaCha's 64-bit stream selector, so
//! `stream(seed, i)` never overlaps `stream(seed, j)` for `i != j`.
//! Seeds tied to a string key (an image id) are derived with SHA-256 so they
//! are stable across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// First 8 bytes (little endian) of `SHA-256(domain || 0x00 || seed_le || key)`.
pub fn derive_seed(domain: &str, seed: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}
