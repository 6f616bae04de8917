//! Deterministic sub-seed derivation.
//!
//! Components that need independent random streams (actors, experiment
//! shards, sweep points) derive their seeds from one master seed and a
//! domain label, so runs stay reproducible while streams stay uncorrelated.

use sha2::{Digest, Sha256};

/// Derives a sub-seed from `master` and a domain `label`.
///
/// The mapping is a cryptographic hash: distinct labels give independent
/// streams, and the same `(master, label)` pair always yields the same seed.
pub fn derive_subseed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
