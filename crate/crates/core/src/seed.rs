//! Deterministic seed derivation.
//!
//! A single master seed fans out into per-fold, per-k-means and per-SVM
//! seeds. A child seed is the first eight bytes (little-endian) of
//! `SHA-256("{master}/{label}")`, so seeds are stable across platforms and
//! releases and independent of evaluation order.

use sha2::{Digest, Sha256};

pub fn derive(master: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{master}/{label}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Eight-byte fingerprint of arbitrary bytes.
pub fn fingerprint(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}
