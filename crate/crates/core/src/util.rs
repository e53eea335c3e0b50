//! Seed derivation and content hashing.
//!
//! All randomness in the pipeline flows from explicit 64-bit seeds. Derived
//! seeds are produced by hashing the parent seed together with a label, so
//! results never depend on scheduling order, map iteration order, or the
//! platform's default hasher.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from a parent seed and a sequence of labels.
pub fn derive_seed(parent: u64, labels: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    for label in labels {
        hasher.update([0u8]);
        hasher.update(label.as_bytes());
    }
    first_u64(&hasher.finalize())
}

/// Derives a child seed from a parent seed and an index.
pub fn derive_indexed_seed(parent: u64, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(index.to_le_bytes());
    first_u64(&hasher.finalize())
}

/// Deterministic RNG for a seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Hex digest of the given string parts, used as stable content identity
/// for jobs and configs.
pub fn content_hash(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn first_u64(digest: &[u8]) -> u64 {
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
