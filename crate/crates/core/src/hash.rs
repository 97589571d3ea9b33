//! Content hashing and seeded substream derivation.
//!
//! Every piece of randomness in the pipeline derives from one run seed via
//! named substreams (stage name + key), so adding candidates never perturbs
//! unrelated results.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// 64-bit content hash, hex-encoded. Used for sample ids; load-time duplicate
/// detection surfaces any collision.
pub fn short_hash(bytes: &[u8]) -> String {
    sha256_hex(bytes)[..16].to_string()
}

/// Derive a substream seed from (base seed, stage name, key).
pub fn substream_seed(base: u64, stage: &str, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update([0x1f]);
    h.update(stage.as_bytes());
    h.update([0x1f]);
    h.update(key.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 yields 32 bytes"))
}

/// Deterministic uniform in [0, 1) from arbitrary byte parts.
pub fn unit_from_parts(parts: &[&[u8]]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let out = h.finalize();
    let x = u64::from_le_bytes(out[..8].try_into().expect("sha256 yields 32 bytes"));
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// 32-byte RNG seed from arbitrary byte parts.
pub fn seed_from_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}
