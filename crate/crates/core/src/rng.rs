//! Labeled deterministic random streams.
//!
//! Each consumer draws from its own ChaCha stream keyed by
//! `sha256(seed || label)`, so adding draws in one module never shifts the
//! values another module sees.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub const JUROR_DRAW: &str = "juror-draw";
pub const QR_NONCE: &str = "qr-nonce";
pub const MIXED_STRATEGY: &str = "mixed-strategy";
pub const MARKET: &str = "market";

pub fn substream(seed: u64, label: &str) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(label.as_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}
