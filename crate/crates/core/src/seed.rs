//! Deterministic seed derivation.
//!
//! seed = first 8 bytes (little-endian) of SHA-256("wavess/seed/v1" || master || n || replicate || stream),
//! every integer encoded as u64 little-endian. Stable across versions.

use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, n: u64, replicate: u64, stream: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"wavess/seed/v1");
    for v in [master, n, replicate, stream] {
        h.update(v.to_le_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

/// Named streams so that one (n, replicate) pair can feed several independent draws.
pub mod stream {
    pub const TRUTH: u64 = 1;
    pub const DESIGN: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const CHAIN: u64 = 4;
    pub const LR: u64 = 5;
    pub const PLUGIN_NULL: u64 = 6;
    pub const PLUGIN_ALT: u64 = 7;
    pub const CALIBRATION: u64 = 8;
}
