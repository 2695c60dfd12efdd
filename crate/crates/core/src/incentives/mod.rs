//! LZSP rewards for honest behaviour, and the payoff-matrix analyzer.

pub mod game;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RewardSchedule;
use crate::exchange::{OutcomeKind, Session};
use crate::ledger::{Ledger, LedgerError, TokenKind};
use crate::types::{AccountId, Amount, Caller, SessionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    /// Buyer scanned the package code on time and answered satisfied.
    ScanAndSatisfaction,
    /// Buyer confirmed receipt of a package shipped without its code.
    DefaultGrant,
    /// Seller shipped with the code and the exchange succeeded.
    SellerExchange,
    /// Each party, after agreeing on a resolution.
    MutualResolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardMint {
    pub session: SessionId,
    pub account: AccountId,
    pub kind: RewardKind,
    pub amount: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewardError {
    #[error("rewards for {0} were already granted")]
    AlreadyGranted(SessionId),
    #[error("session {0} is not terminal")]
    NotTerminal(SessionId),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Mints owed for a terminal session, without touching any state.
pub fn entitlements(session: &Session, schedule: &RewardSchedule) -> Vec<RewardMint> {
    let Some(outcome) = session.outcome else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut push = |account, kind, amount: Amount| {
        if amount > 0 {
            out.push(RewardMint {
                session: session.id,
                account,
                kind,
                amount,
            });
        }
    };
    let omitted_but_confirmed = !session.qr_included && session.receipt_confirmed;
    match outcome.kind {
        OutcomeKind::SuccessConfirmed => {
            if session.qr_included && session.scanned_on_time {
                push(session.buyer, RewardKind::ScanAndSatisfaction, schedule.y);
            } else if omitted_but_confirmed {
                push(session.buyer, RewardKind::DefaultGrant, schedule.default_grant);
            }
            if session.qr_included {
                push(session.seller, RewardKind::SellerExchange, schedule.seller_exchange_reward);
            }
        }
        OutcomeKind::SuccessByDefault => {
            if omitted_but_confirmed {
                push(session.buyer, RewardKind::DefaultGrant, schedule.default_grant);
            }
            if session.qr_included {
                push(session.seller, RewardKind::SellerExchange, schedule.seller_exchange_reward);
            }
        }
        OutcomeKind::ResolvedMutually => {
            push(session.buyer, RewardKind::MutualResolution, schedule.z);
            push(session.seller, RewardKind::MutualResolution, schedule.z);
        }
        OutcomeKind::Cancelled { .. } | OutcomeKind::Arbitrated { .. } => {}
    }
    out
}

/// Tracks which sessions have been rewarded.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RewardBook {
    granted: BTreeSet<SessionId>,
    minted_total: Amount,
}

impl RewardBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn minted_total(&self) -> Amount {
        self.minted_total
    }

    pub fn grant_rewards(
        &mut self,
        ledger: &mut Ledger,
        session: &Session,
        schedule: &RewardSchedule,
    ) -> Result<Vec<RewardMint>, RewardError> {
        if session.outcome.is_none() {
            return Err(RewardError::NotTerminal(session.id));
        }
        if self.granted.contains(&session.id) {
            return Err(RewardError::AlreadyGranted(session.id));
        }
        let mints = entitlements(session, schedule);
        for m in &mints {
            ledger.mint(Caller::Incentives, m.account, TokenKind::Lzsp, m.amount, reward_label(m.kind))?;
            self.minted_total += m.amount;
        }
        self.granted.insert(session.id);
        Ok(mints)
    }
}

fn reward_label(kind: RewardKind) -> &'static str {
    match kind {
        RewardKind::ScanAndSatisfaction => "reward:scan-and-satisfaction",
        RewardKind::DefaultGrant => "reward:default-grant",
        RewardKind::SellerExchange => "reward:seller-exchange",
        RewardKind::MutualResolution => "reward:mutual-resolution",
    }
}
