//! Identifiers, amounts and rates shared by every module.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Token amount in micro-units (10^-6 of a whole token).
pub type Amount = u64;

/// Simulation day. Every deadline in the protocol is expressed in whole days.
pub type Day = u32;

/// Micro-units per whole token.
pub const MICRO: Amount = 1_000_000;

/// Whole tokens to micro-units.
pub const fn tokens(n: u64) -> Amount {
    n * MICRO
}

/// Parts-per-million, used for every configurable fraction.
pub type Ppm = u32;

pub const PPM: u64 = 1_000_000;

/// Applies a ppm fraction with floor rounding.
pub fn apply_ppm(amount: Amount, ppm: Ppm) -> Amount {
    ((amount as u128 * ppm as u128) / PPM as u128) as Amount
}

/// US dollar cents.
pub type UsdCents = u64;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Opaque account address.
    AccountId,
    "acct#"
);
id_type!(ListingId, "listing#");
id_type!(SessionId, "session#");
id_type!(CaseId, "case#");
id_type!(ProposalId, "proposal#");

/// Positive rational exchange rate: `lzs` LZS micro-units buy `lzdc` LZDC micro-units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rate {
    pub lzs: u64,
    pub lzdc: u64,
}

impl Rate {
    pub const PARITY: Rate = Rate { lzs: 1, lzdc: 1 };

    pub fn is_valid(&self) -> bool {
        self.lzs > 0 && self.lzdc > 0
    }

    /// LZS micro-units to LZDC micro-units, rounded toward zero.
    pub fn lzs_to_lzdc(&self, amount: Amount) -> Amount {
        ((amount as u128 * self.lzdc as u128) / self.lzs as u128) as Amount
    }

    /// LZDC micro-units to LZS micro-units, rounded toward zero.
    pub fn lzdc_to_lzs(&self, amount: Amount) -> Amount {
        ((amount as u128 * self.lzs as u128) / self.lzdc as u128) as Amount
    }

    /// Inverse rate.
    pub fn inverse(&self) -> Rate {
        Rate {
            lzs: self.lzdc,
            lzdc: self.lzs,
        }
    }
}

impl Default for Rate {
    fn default() -> Self {
        Rate::PARITY
    }
}

/// Module on whose behalf an internal operation runs. Operations restricted to
/// protocol modules reject `Agent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Caller {
    Agent,
    Ledger,
    Exchange,
    Arbitration,
    Incentives,
    Governance,
}

impl fmt::Display for Caller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Caller::Agent => "agent",
            Caller::Ledger => "ledger",
            Caller::Exchange => "exchange",
            Caller::Arbitration => "arbitration",
            Caller::Incentives => "incentives",
            Caller::Governance => "governance",
        };
        f.write_str(name)
    }
}
