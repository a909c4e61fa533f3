//! Seed plumbing.
//!
//! Every stochastic component draws from its own ChaCha8 stream. Component
//! seeds are derived from a single master seed by hashing the seed together
//! with the component's name, so no two components ever share a stream by
//! accident.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// `sub_seed = hash64(master_seed, component_name)`: the first eight bytes
/// (little endian) of SHA-256 over the master seed's little-endian bytes
/// followed by the UTF-8 component name.
pub fn derive_seed(master_seed: u64, component: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(component.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
