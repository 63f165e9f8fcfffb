//! Deterministic, splittable random number generation.
//!
//! Every randomized stage derives its generator from a user-visible `u64`
//! seed plus a stream of scope labels (stage tag, document ordinal,
//! duplication index, ...). Deriving rather than sharing one generator makes
//! output independent of worker scheduling: any unit of work owns a
//! generator that depends only on the seed and the unit's identity.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stage tags used as the first element of a derivation stream.
///
/// Kept in one place so two stages can never collide on the same stream.
pub mod scope {
    pub const NSP_SAMPLING: u64 = 1;
    pub const MASKING: u64 = 2;
    pub const FOLD_SPLIT: u64 = 3;
    pub const PACKING: u64 = 4;
}

/// Derives an independent generator for `(seed, stream)`.
///
/// The derivation hashes the seed and stream labels, so generators for
/// distinct streams are statistically independent and the mapping is stable
/// across platforms and releases.
pub fn derive_rng(seed: u64, stream: &[u64]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for label in stream {
        hasher.update(label.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
