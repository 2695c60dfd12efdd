//! Two-tier dispute resolution.
//!
//! Low-value disputes are decided by a fixed table over evidence flags.
//! Higher-value disputes go to a court: the claimant pays the jury fee, both
//! sides submit evidence, jurors are drawn by stake, vote by commit-reveal,
//! and the loser of a round may appeal to a larger jury. Escrow and stake
//! effects of a final ruling are applied by the caller.

pub mod ballot;
pub mod sortition;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ArbitrationConfig, TieRule};
use crate::exchange::{DisputeReason, DisputeSubject, Ruling};
use crate::ledger::{Ledger, LedgerError, TokenKind};
use crate::types::{AccountId, Amount, Caller, CaseId, Day, SessionId, UsdCents};

pub use ballot::{commitment, verify_reveal, Ballot};
pub use sortition::{draw_jurors, InsufficientJurors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    Internal,
    External,
}

/// Claimant's tier preference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TierChoice {
    /// Internal up to the value threshold, external above it.
    #[default]
    Auto,
    Internal,
}

/// Structured evidence the internal table decides on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvidenceFlags {
    pub tracking_informed: bool,
    pub delivery_evidence: bool,
    pub return_received: bool,
    pub mismatch_attested: bool,
}

impl EvidenceFlags {
    pub fn all() -> impl Iterator<Item = EvidenceFlags> {
        (0u8..16).map(|bits| EvidenceFlags {
            tracking_informed: bits & 1 != 0,
            delivery_evidence: bits & 2 != 0,
            return_received: bits & 4 != 0,
            mismatch_attested: bits & 8 != 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InternalRuleRow {
    #[serde(flatten)]
    pub flags: EvidenceFlags,
    pub ruling: Ruling,
}

/// The seller (respondent) prevails only with delivery evidence, no
/// attested mismatch and no returned package; every other combination
/// refunds the buyer.
pub fn default_internal_rules() -> Vec<InternalRuleRow> {
    EvidenceFlags::all()
        .map(|flags| {
            let seller_wins =
                flags.delivery_evidence && !flags.mismatch_attested && !flags.return_received;
            InternalRuleRow {
                flags,
                ruling: if seller_wins {
                    Ruling::ForRespondent
                } else {
                    Ruling::ForClaimant
                },
            }
        })
        .collect()
}

/// The table must list each of the 16 flag combinations exactly once.
pub fn check_rule_table(rows: &[InternalRuleRow]) -> Result<(), String> {
    for flags in EvidenceFlags::all() {
        let n = rows.iter().filter(|r| r.flags == flags).count();
        if n != 1 {
            return Err(format!("flag combination {flags:?} appears {n} times, expected once"));
        }
    }
    if rows.len() != 16 {
        return Err(format!("{} rows, expected 16", rows.len()));
    }
    Ok(())
}

pub fn internal_ruling(rows: &[InternalRuleRow], flags: EvidenceFlags) -> Ruling {
    rows.iter()
        .find(|r| r.flags == flags)
        .map(|r| r.ruling)
        .unwrap_or(Ruling::ForClaimant)
}

/// Jury size of round `k` (0-based): each appeal doubles the previous jury
/// and adds one.
pub fn round_size(base: u32, k: u32) -> u64 {
    (0..k).fold(base as u64, |n, _| 2 * n + 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub submitter: AccountId,
    pub content_hash: String,
    pub day: Day,
    pub attests_mismatch: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub for_claimant: u32,
    pub for_respondent: u32,
    pub absent: u32,
    pub ruling: Ruling,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CourtRound {
    pub index: u32,
    pub jurors: Vec<(AccountId, Amount)>,
    pub ballots: BTreeMap<AccountId, Ballot>,
    /// Fees and non-reveal slashes collected for this round.
    pub fee_pool: Amount,
    pub fee_payer: AccountId,
    pub drawn_on: Day,
    pub commit_deadline: Day,
    pub reveal_deadline: Day,
    pub tally: Option<Tally>,
}

impl CourtRound {
    pub fn size(&self) -> usize {
        self.jurors.len()
    }

    pub fn has_juror(&self, id: AccountId) -> bool {
        self.ballots.contains_key(&id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "phase")]
pub enum Phase {
    AwaitingFee { deadline: Day },
    Evidence { until: Day },
    InternalReview { until: Day },
    Voting { round: u32 },
    AppealWindow { until: Day },
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisputeCase {
    pub id: CaseId,
    pub session: SessionId,
    pub claimant: AccountId,
    pub respondent: AccountId,
    pub value_usd_cents: UsdCents,
    /// Amount in dispute, in the session token.
    pub amount: Amount,
    pub reason: DisputeReason,
    pub subject: DisputeSubject,
    pub tier: Tier,
    pub court: Option<String>,
    pub opened: Day,
    pub phase: Phase,
    pub evidence: Vec<Evidence>,
    pub rejected_evidence: Vec<Evidence>,
    pub rounds: Vec<CourtRound>,
    pub fees_paid: BTreeMap<AccountId, Amount>,
    pub ruling: Option<Ruling>,
    pub flags: Option<EvidenceFlags>,
    /// External case decided by the internal table for lack of jurors.
    pub fallback: bool,
    /// Court fee never paid.
    pub dismissed: bool,
    pending_fee: Amount,
    fee_inflow: Amount,
    fee_outflow: Amount,
}

impl DisputeCase {
    pub fn is_closed(&self) -> bool {
        self.phase == Phase::Closed
    }

    /// Winner's ruling as seen by the parties.
    pub fn loser(&self, ruling: Ruling) -> AccountId {
        match ruling {
            Ruling::ForClaimant => self.respondent,
            Ruling::ForRespondent => self.claimant,
        }
    }

    pub fn winner(&self, ruling: Ruling) -> AccountId {
        match ruling {
            Ruling::ForClaimant => self.claimant,
            Ruling::ForRespondent => self.respondent,
        }
    }

    pub fn mismatch_attested(&self) -> bool {
        self.evidence
            .iter()
            .any(|e| e.submitter == self.claimant && e.attests_mismatch)
    }

    pub fn fee_balance(&self) -> (Amount, Amount) {
        (self.fee_inflow, self.fee_outflow)
    }

    pub fn current_round(&self) -> Option<&CourtRound> {
        self.rounds.last()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArbitrationEvent {
    CaseOpened {
        case: CaseId,
        session: SessionId,
        claimant: AccountId,
        respondent: AccountId,
        tier: Tier,
        value_usd_cents: UsdCents,
        reason: DisputeReason,
        subject: DisputeSubject,
    },
    FeePaid {
        case: CaseId,
        payer: AccountId,
        amount: Amount,
        round: u32,
    },
    FeeDeadlineMissed {
        case: CaseId,
    },
    EvidenceSubmitted {
        case: CaseId,
        submitter: AccountId,
        content_hash: String,
        attests_mismatch: bool,
    },
    EvidenceRejected {
        case: CaseId,
        submitter: AccountId,
        content_hash: String,
    },
    JurorsDrawn {
        case: CaseId,
        round: u32,
        jurors: Vec<(AccountId, Amount)>,
        commit_deadline: Day,
        reveal_deadline: Day,
    },
    JuryFallback {
        case: CaseId,
        needed: usize,
        available: usize,
    },
    VoteCommitted {
        case: CaseId,
        round: u32,
        juror: AccountId,
        commitment: String,
    },
    VoteRevealed {
        case: CaseId,
        round: u32,
        juror: AccountId,
        vote: Ruling,
    },
    JurorAbsent {
        case: CaseId,
        round: u32,
        juror: AccountId,
        slashed: Amount,
    },
    RoundTallied {
        case: CaseId,
        round: u32,
        tally: Tally,
        appeal_until: Day,
    },
    Appealed {
        case: CaseId,
        appellant: AccountId,
        round: u32,
        jurors: u64,
        fee: Amount,
    },
    InternalRuling {
        case: CaseId,
        flags: EvidenceFlags,
        ruling: Ruling,
    },
    FeesReimbursed {
        case: CaseId,
        from: AccountId,
        to: AccountId,
        amount: Amount,
    },
    JurorPaid {
        case: CaseId,
        round: u32,
        juror: AccountId,
        amount: Amount,
    },
    PoolReturned {
        case: CaseId,
        round: u32,
        to: AccountId,
        amount: Amount,
    },
    /// The case is decided; the caller applies escrow and stake effects.
    RulingFinal {
        case: CaseId,
        session: SessionId,
        ruling: Ruling,
        subject: DisputeSubject,
        tier: Tier,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArbitrationError {
    #[error("unknown case {0}")]
    UnknownCase(CaseId),
    #[error("session {0} cannot be claimed in its current state")]
    NotClaimEligible(SessionId),
    #[error("case {0} is not handled by this tier")]
    WrongTier(CaseId),
    #[error("fee {offered} below the required {needed}")]
    InsufficientFee { needed: Amount, offered: Amount },
    #[error("{0} is not a juror of the current round")]
    NotAJuror(AccountId),
    #[error("{0} is not a party to the case")]
    NotAParty(AccountId),
    #[error("deadline passed on day {0}")]
    DeadlineExpired(Day),
    #[error("reveal does not match the commitment")]
    CommitmentMismatch,
    #[error("{juror} already cast a ballot")]
    AlreadyCommitted { juror: AccountId },
    #[error("case {0} is not in a phase that allows this")]
    WrongPhase(CaseId),
    #[error("round still open until day {0}")]
    RoundNotClosed(Day),
    #[error("appeal window closed on day {0}")]
    AppealWindowClosed(Day),
    #[error("{0} won the last round and cannot appeal")]
    NotLoser(AccountId),
    #[error("evidence period is closed")]
    EvidenceClosed,
    #[error("salt must be hex")]
    BadSalt,
    #[error(transparent)]
    InsufficientJurors(#[from] InsufficientJurors),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

pub type ArbitrationResult<T> = Result<T, ArbitrationError>;

pub struct OpenCase {
    pub session: SessionId,
    pub claimant: AccountId,
    pub respondent: AccountId,
    pub value_usd_cents: UsdCents,
    pub amount: Amount,
    pub reason: DisputeReason,
    pub subject: DisputeSubject,
    pub choice: TierChoice,
    pub force_internal: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ArbitrationBook {
    cases: BTreeMap<CaseId, DisputeCase>,
    next_case: u64,
}

impl ArbitrationBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn case(&self, id: CaseId) -> Option<&DisputeCase> {
        self.cases.get(&id)
    }

    pub fn cases(&self) -> impl Iterator<Item = &DisputeCase> {
        self.cases.values()
    }

    fn get(&mut self, id: CaseId) -> ArbitrationResult<&mut DisputeCase> {
        self.cases.get_mut(&id).ok_or(ArbitrationError::UnknownCase(id))
    }

    pub fn route_tier(cfg: &ArbitrationConfig, value: UsdCents, choice: TierChoice, forced: bool) -> Tier {
        if forced || choice == TierChoice::Internal || value <= cfg.internal_threshold_usd_cents {
            Tier::Internal
        } else {
            Tier::External
        }
    }

    pub fn open_case(
        &mut self,
        cfg: &ArbitrationConfig,
        req: OpenCase,
        day: Day,
    ) -> (CaseId, Vec<ArbitrationEvent>) {
        let id = CaseId(self.next_case);
        self.next_case += 1;
        let tier = Self::route_tier(cfg, req.value_usd_cents, req.choice, req.force_internal);
        let phase = match tier {
            Tier::Internal => Phase::InternalReview {
                until: day + cfg.evidence_period,
            },
            Tier::External => Phase::AwaitingFee {
                deadline: day + cfg.fee_window,
            },
        };
        let case = DisputeCase {
            id,
            session: req.session,
            claimant: req.claimant,
            respondent: req.respondent,
            value_usd_cents: req.value_usd_cents,
            amount: req.amount,
            reason: req.reason,
            subject: req.subject,
            tier,
            court: (tier == Tier::External).then(|| cfg.court.clone()),
            opened: day,
            phase,
            evidence: Vec::new(),
            rejected_evidence: Vec::new(),
            rounds: Vec::new(),
            fees_paid: BTreeMap::new(),
            ruling: None,
            flags: None,
            fallback: false,
            dismissed: false,
            pending_fee: 0,
            fee_inflow: 0,
            fee_outflow: 0,
        };
        let event = ArbitrationEvent::CaseOpened {
            case: id,
            session: case.session,
            claimant: case.claimant,
            respondent: case.respondent,
            tier,
            value_usd_cents: case.value_usd_cents,
            reason: case.reason,
            subject: case.subject,
        };
        self.cases.insert(id, case);
        (id, vec![event])
    }

    pub fn required_fee(cfg: &ArbitrationConfig, round: u32) -> Amount {
        round_size(cfg.base_jurors, round) * cfg.fee_per_juror
    }

    /// Claimant pays the first-round jury fee; opens the evidence period.
    pub fn pay_fee(
        &mut self,
        ledger: &mut Ledger,
        cfg: &ArbitrationConfig,
        id: CaseId,
        payer: AccountId,
        offered: Amount,
        day: Day,
    ) -> ArbitrationResult<Vec<ArbitrationEvent>> {
        let case = self.get(id)?;
        if case.tier != Tier::External {
            return Err(ArbitrationError::WrongTier(id));
        }
        let Phase::AwaitingFee { deadline } = case.phase else {
            return Err(ArbitrationError::WrongPhase(id));
        };
        if payer != case.claimant {
            return Err(ArbitrationError::NotAParty(payer));
        }
        if day > deadline {
            return Err(ArbitrationError::DeadlineExpired(deadline));
        }
        let needed = Self::required_fee(cfg, 0);
        if offered < needed {
            return Err(ArbitrationError::InsufficientFee { needed, offered });
        }
        ledger.pool_deposit(id, payer, needed)?;
        let case = self.get(id)?;
        case.pending_fee = needed;
        case.fee_inflow += needed;
        *case.fees_paid.entry(payer).or_insert(0) += needed;
        case.phase = Phase::Evidence {
            until: day + cfg.evidence_period,
        };
        Ok(vec![ArbitrationEvent::FeePaid {
            case: id,
            payer,
            amount: needed,
            round: 0,
        }])
    }

    pub fn submit_evidence(
        &mut self,
        id: CaseId,
        submitter: AccountId,
        content_hash: &str,
        attests_mismatch: bool,
        day: Day,
    ) -> ArbitrationResult<Vec<ArbitrationEvent>> {
        let case = self.get(id)?;
        if submitter != case.claimant && submitter != case.respondent {
            return Err(ArbitrationError::NotAParty(submitter));
        }
        let item = Evidence {
            submitter,
            content_hash: content_hash.to_string(),
            day,
            attests_mismatch,
        };
        let open = match case.phase {
            Phase::AwaitingFee { .. } => true,
            Phase::Evidence { until } | Phase::InternalReview { until } => day <= until,
            _ => false,
        };
        if !open {
            case.rejected_evidence.push(item);
            return Err(ArbitrationError::EvidenceClosed);
        }
        case.evidence.push(item);
        Ok(vec![ArbitrationEvent::EvidenceSubmitted {
            case: id,
            submitter,
            content_hash: content_hash.to_string(),
            attests_mismatch,
        }])
    }

    /// Decides an internal case from the rule table.
    pub fn resolve_internal(
        &mut self,
        cfg: &ArbitrationConfig,
        id: CaseId,
        flags: EvidenceFlags,
    ) -> ArbitrationResult<Vec<ArbitrationEvent>> {
        let case = self.get(id)?;
        if case.tier != Tier::Internal {
            return Err(ArbitrationError::WrongTier(id));
        }
        if case.is_closed() {
            return Err(ArbitrationError::WrongPhase(id));
        }
        let ruling = internal_ruling(&cfg.internal_rules, flags);
        case.flags = Some(flags);
        case.ruling = Some(ruling);
        case.phase = Phase::Closed;
        Ok(vec![
            ArbitrationEvent::InternalRuling { case: id, flags, ruling },
            final_event(case),
        ])
    }

    pub fn commit_vote(
        &mut self,
        id: CaseId,
        juror: AccountId,
        commitment: &str,
        day: Day,
    ) -> ArbitrationResult<Vec<ArbitrationEvent>> {
        let case = self.get(id)?;
        let Phase::Voting { round } = case.phase else {
            return Err(ArbitrationError::WrongPhase(id));
        };
        let r = &mut case.rounds[round as usize];
        let Some(ballot) = r.ballots.get_mut(&juror) else {
            return Err(ArbitrationError::NotAJuror(juror));
        };
        if day > r.commit_deadline {
            return Err(ArbitrationError::DeadlineExpired(r.commit_deadline));
        }
        if *ballot != Ballot::Pending {
            return Err(ArbitrationError::AlreadyCommitted { juror });
        }
        *ballot = Ballot::Committed {
            commitment: commitment.to_string(),
        };
        Ok(vec![ArbitrationEvent::VoteCommitted {
            case: id,
            round,
            juror,
            commitment: commitment.to_string(),
        }])
    }

    /// `salt_hex` is the hex encoding of the salt bytes.
    pub fn reveal_vote(
        &mut self,
        id: CaseId,
        juror: AccountId,
        vote: Ruling,
        salt_hex: &str,
        day: Day,
    ) -> ArbitrationResult<Vec<ArbitrationEvent>> {
        let salt = hex::decode(salt_hex).map_err(|_| ArbitrationError::BadSalt)?;
        let case = self.get(id)?;
        let Phase::Voting { round } = case.phase else {
            return Err(ArbitrationError::WrongPhase(id));
        };
        let r = &mut case.rounds[round as usize];
        let Some(ballot) = r.ballots.get_mut(&juror) else {
            return Err(ArbitrationError::NotAJuror(juror));
        };
        if day <= r.commit_deadline {
            return Err(ArbitrationError::RoundNotClosed(r.commit_deadline));
        }
        if day > r.reveal_deadline {
            return Err(ArbitrationError::DeadlineExpired(r.reveal_deadline));
        }
        let Ballot::Committed { commitment } = ballot.clone() else {
            return Err(ArbitrationError::CommitmentMismatch);
        };
        if !verify_reveal(&commitment, vote, &salt, juror) {
            return Err(ArbitrationError::CommitmentMismatch);
        }
        *ballot = Ballot::Revealed {
            commitment,
            vote,
            salt: salt_hex.to_string(),
        };
        Ok(vec![ArbitrationEvent::VoteRevealed {
            case: id,
            round,
            juror,
            vote,
        }])
    }

    fn juror_pool(ledger: &Ledger, case: &DisputeCase) -> BTreeMap<AccountId, Amount> {
        ledger
            .court_stakes()
            .iter()
            .filter(|(id, _)| **id != case.claimant && **id != case.respondent)
            .map(|(id, s)| (*id, *s))
            .collect()
    }

    fn start_round<R: Rng + ?Sized>(
        case: &mut DisputeCase,
        jurors: Vec<(AccountId, Amount)>,
        fee: Amount,
        payer: AccountId,
        cfg: &ArbitrationConfig,
        day: Day,
        _rng: &mut R,
    ) -> ArbitrationEvent {
        let index = case.rounds.len() as u32;
        let commit_deadline = day + cfg.commit_period;
        let reveal_deadline = commit_deadline + cfg.reveal_period;
        let ballots = jurors.iter().map(|(id, _)| (*id, Ballot::Pending)).collect();
        case.rounds.push(CourtRound {
            index,
            jurors: jurors.clone(),
            ballots,
            fee_pool: fee,
            fee_payer: payer,
            drawn_on: day,
            commit_deadline,
            reveal_deadline,
            tally: None,
        });
        case.phase = Phase::Voting { round: index };
        ArbitrationEvent::JurorsDrawn {
            case: case.id,
            round: index,
            jurors,
            commit_deadline,
            reveal_deadline,
        }
    }

    /// Loser of the last round asks for a larger jury.
    #[allow(clippy::too_many_arguments)]
    pub fn appeal<R: Rng + ?Sized>(
        &mut self,
        ledger: &mut Ledger,
        cfg: &ArbitrationConfig,
        id: CaseId,
        appellant: AccountId,
        offered: Amount,
        day: Day,
        rng: &mut R,
    ) -> ArbitrationResult<Vec<ArbitrationEvent>> {
        let case = self.cases.get(&id).ok_or(ArbitrationError::UnknownCase(id))?;
        let Phase::AppealWindow { until } = case.phase else {
            return match case.phase {
                Phase::Closed => Err(ArbitrationError::AppealWindowClosed(case.opened)),
                _ => Err(ArbitrationError::WrongPhase(id)),
            };
        };
        if day > until {
            return Err(ArbitrationError::AppealWindowClosed(until));
        }
        if appellant != case.claimant && appellant != case.respondent {
            return Err(ArbitrationError::NotAParty(appellant));
        }
        let last = case
            .rounds
            .last()
            .and_then(|r| r.tally)
            .ok_or(ArbitrationError::WrongPhase(id))?;
        if case.loser(last.ruling) != appellant {
            return Err(ArbitrationError::NotLoser(appellant));
        }
        let next = case.rounds.len() as u32;
        let n = round_size(cfg.base_jurors, next);
        let needed = n * cfg.fee_per_juror;
        if offered < needed {
            return Err(ArbitrationError::InsufficientFee { needed, offered });
        }
        ledger.require_balance(appellant, TokenKind::Lzs, needed)?;
        let pool = Self::juror_pool(ledger, case);
        let jurors = draw_jurors(&pool, n as usize, rng)?;
        ledger.pool_deposit(id, appellant, needed)?;
        let case = self.get(id)?;
        case.fee_inflow += needed;
        *case.fees_paid.entry(appellant).or_insert(0) += needed;
        let drawn = Self::start_round(case, jurors, needed, appellant, cfg, day, rng);
        Ok(vec![
            ArbitrationEvent::Appealed {
                case: id,
                appellant,
                round: next,
                jurors: n,
                fee: needed,
            },
            ArbitrationEvent::FeePaid {
                case: id,
                payer: appellant,
                amount: needed,
                round: next,
            },
            drawn,
        ])
    }

    /// Advances every open case to `day`. `flags` supplies the evidence
    /// flags used when the internal table decides a case.
    pub fn tick<R: Rng + ?Sized>(
        &mut self,
        ledger: &mut Ledger,
        cfg: &ArbitrationConfig,
        day: Day,
        rng: &mut R,
        flags: &dyn Fn(&DisputeCase) -> EvidenceFlags,
    ) -> ArbitrationResult<Vec<ArbitrationEvent>> {
        let mut events = Vec::new();
        let ids: Vec<CaseId> = self
            .cases
            .values()
            .filter(|c| !c.is_closed())
            .map(|c| c.id)
            .collect();
        for id in ids {
            let phase = self.get(id)?.phase;
            match phase {
                Phase::AwaitingFee { deadline } if day > deadline => {
                    let case = self.get(id)?;
                    case.dismissed = true;
                    case.ruling = Some(Ruling::ForRespondent);
                    case.phase = Phase::Closed;
                    events.push(ArbitrationEvent::FeeDeadlineMissed { case: id });
                    events.push(final_event(case));
                }
                Phase::InternalReview { until } if day > until => {
                    let f = flags(self.get(id)?);
                    events.extend(self.resolve_internal(cfg, id, f)?);
                }
                Phase::Evidence { until } if day > until => {
                    let case = self.cases.get(&id).ok_or(ArbitrationError::UnknownCase(id))?;
                    let pool = Self::juror_pool(ledger, case);
                    let n = round_size(cfg.base_jurors, 0) as usize;
                    match draw_jurors(&pool, n, rng) {
                        Ok(jurors) => {
                            let case = self.get(id)?;
                            let (fee, payer) = (case.pending_fee, case.claimant);
                            case.pending_fee = 0;
                            events.push(Self::start_round(case, jurors, fee, payer, cfg, day, rng));
                        }
                        Err(e) => {
                            let f = flags(case);
                            events.push(ArbitrationEvent::JuryFallback {
                                case: id,
                                needed: e.needed,
                                available: e.available,
                            });
                            let case = self.get(id)?;
                            let (fee, payer) = (case.pending_fee, case.claimant);
                            case.pending_fee = 0;
                            if fee > 0 {
                                ledger.pool_payout(Caller::Arbitration, id, payer, fee)?;
                                case.fee_outflow += fee;
                                events.push(ArbitrationEvent::PoolReturned {
                                    case: id,
                                    round: 0,
                                    to: payer,
                                    amount: fee,
                                });
                            }
                            let ruling = internal_ruling(&cfg.internal_rules, f);
                            case.fallback = true;
                            case.flags = Some(f);
                            case.ruling = Some(ruling);
                            case.phase = Phase::Closed;
                            events.push(ArbitrationEvent::InternalRuling { case: id, flags: f, ruling });
                            events.push(final_event(case));
                        }
                    }
                }
                Phase::Voting { round } => {
                    let deadline = self.get(id)?.rounds[round as usize].reveal_deadline;
                    if day > deadline {
                        events.extend(self.tally(ledger, cfg, id, round, day)?);
                    }
                }
                Phase::AppealWindow { until } if day > until => {
                    let case = self.get(id)?;
                    let ruling = case
                        .rounds
                        .last()
                        .and_then(|r| r.tally)
                        .map(|t| t.ruling)
                        .ok_or(ArbitrationError::WrongPhase(id))?;
                    case.ruling = Some(ruling);
                    case.phase = Phase::Closed;
                    events.extend(self.settle_fees(ledger, cfg, id)?);
                    events.push(final_event(self.get(id)?));
                }
                _ => {}
            }
        }
        Ok(events)
    }

    fn tally(
        &mut self,
        ledger: &mut Ledger,
        cfg: &ArbitrationConfig,
        id: CaseId,
        round: u32,
        day: Day,
    ) -> ArbitrationResult<Vec<ArbitrationEvent>> {
        let mut events = Vec::new();
        let jurors: Vec<AccountId> = self.get(id)?.rounds[round as usize]
            .jurors
            .iter()
            .map(|(j, _)| *j)
            .collect();
        let (mut yes, mut no, mut absent) = (0u32, 0u32, 0u32);
        for juror in jurors {
            let ballot = self.get(id)?.rounds[round as usize].ballots[&juror].clone();
            match ballot.vote() {
                Some(Ruling::ForClaimant) => yes += 1,
                Some(Ruling::ForRespondent) => no += 1,
                None => {
                    absent += 1;
                    let slashed =
                        ledger.court_stake_slash(Caller::Arbitration, juror, id, cfg.non_reveal_penalty_ppm)?;
                    let case = self.get(id)?;
                    case.fee_inflow += slashed;
                    let r = &mut case.rounds[round as usize];
                    r.fee_pool += slashed;
                    r.ballots.insert(
                        juror,
                        Ballot::Absent {
                            committed: matches!(ballot, Ballot::Committed { .. }),
                        },
                    );
                    events.push(ArbitrationEvent::JurorAbsent {
                        case: id,
                        round,
                        juror,
                        slashed,
                    });
                }
            }
        }
        let ruling = match yes.cmp(&no) {
            std::cmp::Ordering::Greater => Ruling::ForClaimant,
            std::cmp::Ordering::Less => Ruling::ForRespondent,
            std::cmp::Ordering::Equal => match cfg.tie_rule {
                TieRule::ForRespondent => Ruling::ForRespondent,
                TieRule::ForClaimant => Ruling::ForClaimant,
            },
        };
        let tally = Tally {
            for_claimant: yes,
            for_respondent: no,
            absent,
            ruling,
        };
        let appeal_until = day + cfg.appeal_window;
        let case = self.get(id)?;
        case.rounds[round as usize].tally = Some(tally);
        case.phase = Phase::AppealWindow { until: appeal_until };
        events.push(ArbitrationEvent::RoundTallied {
            case: id,
            round,
            tally,
            appeal_until,
        });
        Ok(events)
    }

    /// Loser reimburses the winner's fees, then each round's pool is split
    /// among that round's coherent jurors.
    fn settle_fees(
        &mut self,
        ledger: &mut Ledger,
        cfg: &ArbitrationConfig,
        id: CaseId,
    ) -> ArbitrationResult<Vec<ArbitrationEvent>> {
        let mut events = Vec::new();
        let case = self.get(id)?.clone();
        let ruling = case.ruling.ok_or(ArbitrationError::WrongPhase(id))?;
        if cfg.refund_winner_fees {
            let (winner, loser) = (case.winner(ruling), case.loser(ruling));
            let owed = case.fees_paid.get(&winner).copied().unwrap_or(0);
            let amount = owed.min(ledger.balance(loser, TokenKind::Lzs));
            if amount > 0 {
                ledger.transfer(loser, winner, amount, TokenKind::Lzs)?;
                events.push(ArbitrationEvent::FeesReimbursed {
                    case: id,
                    from: loser,
                    to: winner,
                    amount,
                });
            }
        }
        let mut outflow = 0;
        for r in &case.rounds {
            let Some(tally) = r.tally else { continue };
            let coherent: Vec<AccountId> = r
                .ballots
                .iter()
                .filter(|(_, b)| b.vote() == Some(tally.ruling))
                .map(|(j, _)| *j)
                .collect();
            if r.fee_pool == 0 {
                continue;
            }
            if coherent.is_empty() {
                ledger.pool_payout(Caller::Arbitration, id, r.fee_payer, r.fee_pool)?;
                outflow += r.fee_pool;
                events.push(ArbitrationEvent::PoolReturned {
                    case: id,
                    round: r.index,
                    to: r.fee_payer,
                    amount: r.fee_pool,
                });
                continue;
            }
            let n = coherent.len() as u64;
            let share = r.fee_pool / n;
            let rem = r.fee_pool % n;
            // BTreeMap order: lowest ids take the remainder.
            for (i, juror) in coherent.iter().enumerate() {
                let amount = share + u64::from((i as u64) < rem);
                if amount == 0 {
                    continue;
                }
                ledger.pool_payout(Caller::Arbitration, id, *juror, amount)?;
                outflow += amount;
                events.push(ArbitrationEvent::JurorPaid {
                    case: id,
                    round: r.index,
                    juror: *juror,
                    amount,
                });
            }
        }
        self.get(id)?.fee_outflow += outflow;
        Ok(events)
    }
}

fn final_event(case: &DisputeCase) -> ArbitrationEvent {
    ArbitrationEvent::RulingFinal {
        case: case.id,
        session: case.session,
        ruling: case.ruling.unwrap_or(Ruling::ForRespondent),
        subject: case.subject,
        tier: case.tier,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::AccountRole;
    use crate::rng::{substream, JUROR_DRAW};
    use crate::types::tokens;

    #[test]
    fn recurrence_closed_form() {
        let sizes: Vec<u64> = (0..5).map(|k| round_size(3, k)).collect();
        assert_eq!(sizes, vec![3, 7, 15, 31, 63]);
        for n0 in 1..6u32 {
            for k in 0..=10u32 {
                assert_eq!(round_size(n0, k), (n0 as u64 + 1) * (1 << k) - 1);
            }
        }
    }

    #[test]
    fn rule_table_oracle() {
        let rows = default_internal_rules();
        check_rule_table(&rows).unwrap();
        // Enumerated by hand: the seller prevails in exactly these rows.
        let seller_rows = [
            (false, true, false, false),
            (true, true, false, false),
        ];
        for f in EvidenceFlags::all() {
            let key = (f.tracking_informed, f.delivery_evidence, f.return_received, f.mismatch_attested);
            let expected = if seller_rows.contains(&key) {
                Ruling::ForRespondent
            } else {
                Ruling::ForClaimant
            };
            assert_eq!(internal_ruling(&rows, f), expected, "{f:?}");
        }
        let mut bad = rows.clone();
        bad.pop();
        assert!(check_rule_table(&bad).is_err());
    }

    #[test]
    fn tier_threshold_inclusive() {
        let cfg = ArbitrationConfig::default();
        assert_eq!(ArbitrationBook::route_tier(&cfg, 5000, TierChoice::Auto, false), Tier::Internal);
        assert_eq!(ArbitrationBook::route_tier(&cfg, 5001, TierChoice::Auto, false), Tier::External);
        assert_eq!(ArbitrationBook::route_tier(&cfg, 9000, TierChoice::Internal, false), Tier::Internal);
        assert_eq!(ArbitrationBook::route_tier(&cfg, 9000, TierChoice::Auto, true), Tier::Internal);
    }

    struct Court {
        ledger: Ledger,
        book: ArbitrationBook,
        cfg: ArbitrationConfig,
        buyer: AccountId,
        seller: AccountId,
        jurors: Vec<AccountId>,
    }

    fn court(n_jurors: usize) -> Court {
        let mut ledger = Ledger::new();
        let buyer = ledger.create_account(AccountRole::Buyer, "b");
        let seller = ledger.create_account(AccountRole::Seller, "s");
        ledger.genesis(buyer, TokenKind::Lzs, tokens(100)).unwrap();
        ledger.genesis(seller, TokenKind::Lzs, tokens(100)).unwrap();
        let jurors = (0..n_jurors)
            .map(|i| {
                let j = ledger.create_account(AccountRole::Neutral, format!("j{i}"));
                ledger.genesis(j, TokenKind::Lzs, tokens(100)).unwrap();
                ledger.court_stake_deposit(j, tokens(10)).unwrap();
                j
            })
            .collect();
        Court {
            ledger,
            book: ArbitrationBook::new(),
            cfg: ArbitrationConfig::default(),
            buyer,
            seller,
            jurors,
        }
    }

    fn open_external(c: &mut Court) -> CaseId {
        let (id, _) = c.book.open_case(
            &c.cfg,
            OpenCase {
                session: SessionId(0),
                claimant: c.buyer,
                respondent: c.seller,
                value_usd_cents: 10_000,
                amount: tokens(100),
                reason: DisputeReason::WrongItem,
                subject: DisputeSubject::Escrow,
                choice: TierChoice::Auto,
                force_internal: false,
            },
            0,
        );
        id
    }

    fn no_flags(_: &DisputeCase) -> EvidenceFlags {
        EvidenceFlags::default()
    }

    #[test]
    fn fee_required_and_deadline() {
        let mut c = court(3);
        let id = open_external(&mut c);
        let needed = ArbitrationBook::required_fee(&c.cfg, 0);
        assert_eq!(
            c.book.pay_fee(&mut c.ledger, &c.cfg, id, c.buyer, needed - 1, 0),
            Err(ArbitrationError::InsufficientFee { needed, offered: needed - 1 })
        );
        let mut rng = substream(1, JUROR_DRAW);
        let ev = c.book.tick(&mut c.ledger, &c.cfg, c.cfg.fee_window + 1, &mut rng, &no_flags).unwrap();
        assert!(ev.iter().any(|e| matches!(e, ArbitrationEvent::FeeDeadlineMissed { .. })));
        assert_eq!(c.book.case(id).unwrap().ruling, Some(Ruling::ForRespondent));
    }

    /// Runs a full round where `votes[i]` is juror i's reveal (None = absent).
    fn run_round(c: &mut Court, id: CaseId, votes: &[Option<Ruling>], day: &mut Day) -> Vec<ArbitrationEvent> {
        let mut rng = substream(9, JUROR_DRAW);
        let mut all = Vec::new();
        let round = match c.book.case(id).unwrap().phase {
            Phase::Voting { round } => round,
            p => panic!("{p:?}"),
        };
        let jurors: Vec<AccountId> = c.book.case(id).unwrap().rounds[round as usize]
            .jurors
            .iter()
            .map(|(j, _)| *j)
            .collect();
        for (j, v) in jurors.iter().zip(votes) {
            if let Some(v) = v {
                let salt = format!("{:02x}", j.0);
                let h = commitment(*v, &hex::decode(&salt).unwrap(), *j);
                c.book.commit_vote(id, *j, &h, *day).unwrap();
            }
        }
        let reveal_day = c.book.case(id).unwrap().rounds[round as usize].commit_deadline + 1;
        for (j, v) in jurors.iter().zip(votes) {
            if let Some(v) = v {
                let salt = format!("{:02x}", j.0);
                c.book.reveal_vote(id, *j, *v, &salt, reveal_day).unwrap();
            }
        }
        *day = c.book.case(id).unwrap().rounds[round as usize].reveal_deadline + 1;
        all.extend(c.book.tick(&mut c.ledger, &c.cfg, *day, &mut rng, &no_flags).unwrap());
        all
    }

    fn to_voting(c: &mut Court) -> (CaseId, Day) {
        let id = open_external(c);
        let needed = ArbitrationBook::required_fee(&c.cfg, 0);
        c.book.pay_fee(&mut c.ledger, &c.cfg, id, c.buyer, needed, 0).unwrap();
        let day = c.cfg.evidence_period + 1;
        let mut rng = substream(9, JUROR_DRAW);
        c.book.tick(&mut c.ledger, &c.cfg, day, &mut rng, &no_flags).unwrap();
        (id, day)
    }

    #[test]
    fn majority_and_payouts_conserve_fees() {
        let mut c = court(5);
        let (id, mut day) = to_voting(&mut c);
        let ev = run_round(
            &mut c,
            id,
            &[Some(Ruling::ForClaimant), Some(Ruling::ForClaimant), Some(Ruling::ForRespondent)],
            &mut day,
        );
        assert!(ev.iter().any(|e| matches!(e, ArbitrationEvent::RoundTallied { tally: Tally { ruling: Ruling::ForClaimant, .. }, .. })));
        day += c.cfg.appeal_window + 1;
        let mut rng = substream(9, JUROR_DRAW);
        let ev = c.book.tick(&mut c.ledger, &c.cfg, day, &mut rng, &no_flags).unwrap();
        let paid: Amount = ev
            .iter()
            .filter_map(|e| match e {
                ArbitrationEvent::JurorPaid { amount, .. } => Some(*amount),
                _ => None,
            })
            .sum();
        assert_eq!(paid, tokens(3));
        let case = c.book.case(id).unwrap();
        let (i, o) = case.fee_balance();
        assert_eq!(i, o);
        assert_eq!(c.ledger.pool(id), 0);
        // Respondent lost and reimbursed the claimant's fee.
        assert_eq!(c.ledger.balance(c.buyer, TokenKind::Lzs), tokens(100));
        assert!(c.ledger.conservation_report().holds());
    }

    #[test]
    fn tie_with_absent_goes_to_respondent_and_absent_is_slashed() {
        let mut c = court(3);
        let (id, mut day) = to_voting(&mut c);
        let ev = run_round(
            &mut c,
            id,
            &[Some(Ruling::ForClaimant), Some(Ruling::ForRespondent), None],
            &mut day,
        );
        let slashed = ev.iter().find_map(|e| match e {
            ArbitrationEvent::JurorAbsent { slashed, .. } => Some(*slashed),
            _ => None,
        });
        assert_eq!(slashed, Some(tokens(3)));
        let t = c.book.case(id).unwrap().rounds[0].tally.unwrap();
        assert_eq!(t.ruling, Ruling::ForRespondent);
        assert_eq!((t.for_claimant, t.for_respondent, t.absent), (1, 1, 1));
    }

    #[test]
    fn appeals_grow_jury() {
        let mut c = court(40);
        let (id, mut day) = to_voting(&mut c);
        run_round(&mut c, id, &[Some(Ruling::ForRespondent); 3], &mut day);
        let mut rng = substream(3, JUROR_DRAW);
        assert_eq!(
            c.book.appeal(&mut c.ledger, &c.cfg, id, c.seller, tokens(7), day, &mut rng),
            Err(ArbitrationError::NotLoser(c.seller))
        );
        assert!(matches!(
            c.book.appeal(&mut c.ledger, &c.cfg, id, c.buyer, tokens(6), day, &mut rng),
            Err(ArbitrationError::InsufficientFee { .. })
        ));
        c.book.appeal(&mut c.ledger, &c.cfg, id, c.buyer, tokens(7), day, &mut rng).unwrap();
        assert_eq!(c.book.case(id).unwrap().rounds[1].size(), 7);
        run_round(&mut c, id, &[Some(Ruling::ForRespondent); 7], &mut day);
        c.book.appeal(&mut c.ledger, &c.cfg, id, c.buyer, tokens(15), day, &mut rng).unwrap();
        assert_eq!(c.book.case(id).unwrap().rounds[2].size(), 15);
        assert!(c.ledger.conservation_report().holds());
        let _ = c.jurors.len();
    }

    #[test]
    fn appeal_after_window_rejected() {
        let mut c = court(10);
        let (id, mut day) = to_voting(&mut c);
        run_round(&mut c, id, &[Some(Ruling::ForRespondent); 3], &mut day);
        let until = match c.book.case(id).unwrap().phase {
            Phase::AppealWindow { until } => until,
            p => panic!("{p:?}"),
        };
        let mut rng = substream(3, JUROR_DRAW);
        assert_eq!(
            c.book.appeal(&mut c.ledger, &c.cfg, id, c.buyer, tokens(7), until + 1, &mut rng),
            Err(ArbitrationError::AppealWindowClosed(until))
        );
    }

    #[test]
    fn commit_reveal_errors() {
        let mut c = court(3);
        let (id, day) = to_voting(&mut c);
        let j = c.book.case(id).unwrap().rounds[0].jurors[0].0;
        assert_eq!(
            c.book.commit_vote(id, c.buyer, "00", day),
            Err(ArbitrationError::NotAJuror(c.buyer))
        );
        let h = commitment(Ruling::ForClaimant, &[1, 2], j);
        c.book.commit_vote(id, j, &h, day).unwrap();
        let after = c.book.case(id).unwrap().rounds[0].commit_deadline + 1;
        assert_eq!(
            c.book.reveal_vote(id, j, Ruling::ForClaimant, "0103", after),
            Err(ArbitrationError::CommitmentMismatch)
        );
        c.book.reveal_vote(id, j, Ruling::ForClaimant, "0102", after).unwrap();
    }

    #[test]
    fn no_jurors_falls_back_to_table() {
        let mut c = court(1);
        let id = open_external(&mut c);
        let fee = ArbitrationBook::required_fee(&c.cfg, 0);
        c.book.pay_fee(&mut c.ledger, &c.cfg, id, c.buyer, fee, 0).unwrap();
        let mut rng = substream(9, JUROR_DRAW);
        let ev = c
            .book
            .tick(&mut c.ledger, &c.cfg, c.cfg.evidence_period + 1, &mut rng, &no_flags)
            .unwrap();
        assert!(ev.iter().any(|e| matches!(e, ArbitrationEvent::JuryFallback { .. })));
        let case = c.book.case(id).unwrap();
        assert!(case.fallback);
        assert_eq!(case.ruling, Some(Ruling::ForClaimant));
        assert_eq!(c.ledger.balance(c.buyer, TokenKind::Lzs), tokens(100));
    }

    #[test]
    fn late_evidence_recorded_as_rejected() {
        let mut c = court(3);
        let (id, day) = to_voting(&mut c);
        assert_eq!(
            c.book.submit_evidence(id, c.buyer, "ab", true, day),
            Err(ArbitrationError::EvidenceClosed)
        );
        assert_eq!(c.book.case(id).unwrap().rejected_evidence.len(), 1);
    }

    #[test]
    fn internal_on_external_is_wrong_tier() {
        let mut c = court(3);
        let id = open_external(&mut c);
        assert_eq!(
            c.book.resolve_internal(&c.cfg, id, EvidenceFlags::default()),
            Err(ArbitrationError::WrongTier(id))
        );
    }
}
