//! SHA-256 helpers and canonical JSON.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const HASH_NAME: &str = "sha256";

pub type Hash32 = [u8; 32];

pub fn sha256(parts: &[&[u8]]) -> Hash32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

pub fn sha256_hex(parts: &[&[u8]]) -> String {
    hex::encode(sha256(parts))
}

/// Serializes with object keys sorted and no insignificant whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    // serde_json::Value keeps maps in a BTreeMap, which sorts keys.
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}
