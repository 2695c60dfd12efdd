//! Commit-reveal ballots.

use serde::{Deserialize, Serialize};

use crate::exchange::Ruling;
use crate::hash::sha256;
use crate::types::AccountId;

fn vote_byte(vote: Ruling) -> u8 {
    match vote {
        Ruling::ForClaimant => 1,
        Ruling::ForRespondent => 2,
    }
}

/// `sha256(vote || salt || juror-id)`, hex encoded. The juror id is the
/// 8-byte big-endian account number.
pub fn commitment(vote: Ruling, salt: &[u8], juror: AccountId) -> String {
    hex::encode(sha256(&[&[vote_byte(vote)], salt, &juror.0.to_be_bytes()]))
}

pub fn verify_reveal(committed: &str, vote: Ruling, salt: &[u8], juror: AccountId) -> bool {
    commitment(vote, salt, juror) == committed
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum Ballot {
    Pending,
    Committed { commitment: String },
    Revealed { commitment: String, vote: Ruling, salt: String },
    Absent { committed: bool },
}

impl Ballot {
    pub fn vote(&self) -> Option<Ruling> {
        match self {
            Ballot::Revealed { vote, .. } => Some(*vote),
            _ => None,
        }
    }
}
