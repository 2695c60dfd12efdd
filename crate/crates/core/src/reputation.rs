//! Peer reputation on a 0..=100 integer scale.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ReputationConfig;
use crate::types::{AccountId, Caller, Day, SessionId};

pub const MAX_SCORE: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReputationReason {
    Feedback,
    QrNonResponse,
    Resolution,
    Arbitration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub day: Day,
    pub delta: i32,
    pub reason: ReputationReason,
    pub counterparty: Option<AccountId>,
    pub session: Option<SessionId>,
    /// Stored verbatim and never edited.
    pub comment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReputationScore {
    pub value: u32,
    pub history: Vec<HistoryEntry>,
}

impl ReputationScore {
    /// Recomputes the score from the history; must equal `value`.
    pub fn replay(initial: u32, history: &[HistoryEntry]) -> u32 {
        history
            .iter()
            .fold(initial, |v, e| clamp_add(v, e.delta))
    }
}

fn clamp_add(value: u32, delta: i32) -> u32 {
    (value as i64 + delta as i64).clamp(0, MAX_SCORE as i64) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    Good,
    Bad,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub rater: AccountId,
    pub ratee: AccountId,
    pub polarity: Polarity,
    #[serde(default)]
    pub comment: Option<String>,
    pub session: SessionId,
}

/// What the reputation book needs to know about the rated session.
#[derive(Debug, Clone, Copy)]
pub struct SessionParties {
    pub buyer: AccountId,
    pub seller: AccountId,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReputationError {
    #[error("{0} already has a reputation score")]
    AlreadyInitialized(AccountId),
    #[error("{0} has no reputation score")]
    Unknown(AccountId),
    #[error("session {0} is not terminal")]
    NotTerminal(SessionId),
    #[error("{rater} already rated session {session}")]
    DuplicateFeedback { rater: AccountId, session: SessionId },
    #[error("{0} is not a party to the rated session")]
    NotParticipant(AccountId),
    #[error("{0} may not apply penalties")]
    UnauthorizedCaller(Caller),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReputationBook {
    scores: BTreeMap<AccountId, ReputationScore>,
    rated: BTreeSet<(AccountId, SessionId)>,
    #[serde(skip)]
    journal: Vec<ScoreChange>,
}

/// One applied history entry and the resulting score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreChange {
    pub account: AccountId,
    pub entry: HistoryEntry,
    pub value: u32,
}

impl ReputationBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn init(&mut self, account: AccountId, cfg: &ReputationConfig) -> Result<u32, ReputationError> {
        if self.scores.contains_key(&account) {
            return Err(ReputationError::AlreadyInitialized(account));
        }
        let value = cfg.initial.min(MAX_SCORE);
        self.scores.insert(
            account,
            ReputationScore {
                value,
                history: Vec::new(),
            },
        );
        Ok(value)
    }

    pub fn score(&self, account: AccountId) -> Option<u32> {
        self.scores.get(&account).map(|s| s.value)
    }

    pub fn record(&self, account: AccountId) -> Option<&ReputationScore> {
        self.scores.get(&account)
    }

    pub fn drain_journal(&mut self) -> Vec<ScoreChange> {
        std::mem::take(&mut self.journal)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AccountId, &ReputationScore)> {
        self.scores.iter()
    }

    fn push(
        &mut self,
        account: AccountId,
        entry: HistoryEntry,
    ) -> Result<u32, ReputationError> {
        let score = self
            .scores
            .get_mut(&account)
            .ok_or(ReputationError::Unknown(account))?;
        score.value = clamp_add(score.value, entry.delta);
        score.history.push(entry.clone());
        let value = score.value;
        self.journal.push(ScoreChange { account, entry, value });
        Ok(value)
    }

    pub fn apply_feedback(
        &mut self,
        feedback: &Feedback,
        parties: SessionParties,
        day: Day,
        cfg: &ReputationConfig,
    ) -> Result<u32, ReputationError> {
        if !parties.terminal {
            return Err(ReputationError::NotTerminal(feedback.session));
        }
        let pair_ok = (feedback.rater == parties.buyer && feedback.ratee == parties.seller)
            || (feedback.rater == parties.seller && feedback.ratee == parties.buyer);
        if !pair_ok {
            let outsider = if feedback.rater != parties.buyer && feedback.rater != parties.seller {
                feedback.rater
            } else {
                feedback.ratee
            };
            return Err(ReputationError::NotParticipant(outsider));
        }
        if self.rated.contains(&(feedback.rater, feedback.session)) {
            return Err(ReputationError::DuplicateFeedback {
                rater: feedback.rater,
                session: feedback.session,
            });
        }
        let delta = match feedback.polarity {
            Polarity::Good => cfg.good_delta as i32,
            Polarity::Bad => -(cfg.bad_delta as i32),
        };
        let value = self.push(
            feedback.ratee,
            HistoryEntry {
                day,
                delta,
                reason: ReputationReason::Feedback,
                counterparty: Some(feedback.rater),
                session: Some(feedback.session),
                comment: feedback.comment.clone(),
            },
        )?;
        self.rated.insert((feedback.rater, feedback.session));
        Ok(value)
    }

    pub fn penalize(
        &mut self,
        caller: Caller,
        account: AccountId,
        reason: ReputationReason,
        amount: u32,
        day: Day,
        session: Option<SessionId>,
    ) -> Result<u32, ReputationError> {
        if !matches!(caller, Caller::Exchange | Caller::Arbitration) {
            return Err(ReputationError::UnauthorizedCaller(caller));
        }
        self.push(
            account,
            HistoryEntry {
                day,
                delta: -(amount as i32),
                reason,
                counterparty: None,
                session,
                comment: None,
            },
        )
    }
}
