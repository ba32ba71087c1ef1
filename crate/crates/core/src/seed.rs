//! Deterministic seed derivation. Every random stream in a run is keyed by
//! the master seed plus a purpose label and indices, hashed with 64-bit FNV-1a.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// FNV-1a over the master seed, the label and each index (little-endian,
/// `0xff`-separated).
pub fn derive(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&master.to_le_bytes());
    h.write_u8(0xff);
    h.write(label.as_bytes());
    for i in indices {
        h.write_u8(0xff);
        h.write(&i.to_le_bytes());
    }
    h.finish()
}

/// FNV-1a of arbitrary text parts, used for sweep sub-seeds and config hashes.
pub fn hash_parts(master: u64, parts: &[&str]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&master.to_le_bytes());
    for p in parts {
        h.write_u8(0xff);
        h.write(p.as_bytes());
    }
    h.finish()
}

pub fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn stream(master: u64, label: &str, indices: &[u64]) -> SimRng {
    rng(derive(master, label, indices))
}
