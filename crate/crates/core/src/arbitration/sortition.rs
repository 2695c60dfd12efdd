//! Stake-weighted juror selection without replacement.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::types::{AccountId, Amount};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("pool has {available} staked candidates, {needed} jurors needed")]
pub struct InsufficientJurors {
    pub needed: usize,
    pub available: usize,
}

/// Draws `n` distinct jurors; each pick is proportional to stake among the
/// candidates not yet drawn. Zero-stake candidates are never drawn. The
/// result is a pure function of the pool and the RNG state.
pub fn draw_jurors<R: Rng + ?Sized>(
    pool: &BTreeMap<AccountId, Amount>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<(AccountId, Amount)>, InsufficientJurors> {
    let mut remaining: Vec<(AccountId, Amount)> = pool
        .iter()
        .filter(|(_, &stake)| stake > 0)
        .map(|(&id, &stake)| (id, stake))
        .collect();
    if remaining.len() < n {
        return Err(InsufficientJurors {
            needed: n,
            available: remaining.len(),
        });
    }
    let mut drawn = Vec::with_capacity(n);
    for _ in 0..n {
        let total: u128 = remaining.iter().map(|(_, s)| *s as u128).sum();
        let mut ticket = rng.gen_range(0..total);
        let mut pick = remaining.len() - 1;
        for (i, (_, stake)) in remaining.iter().enumerate() {
            if ticket < *stake as u128 {
                pick = i;
                break;
            }
            ticket -= *stake as u128;
        }
        drawn.push(remaining.remove(pick));
    }
    Ok(drawn)
}
