//! The engine owns every module and is the only way state changes.
//!
//! Inputs are [`Command`]s and clock ticks. Each input is journaled, then
//! applied; every effect it causes is journaled after it, tagged with the
//! emitting module. Replaying the command records against a fresh engine
//! built from the same seed and configuration reproduces the journal.

use std::collections::{BTreeMap, VecDeque};

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::arbitration::{
    ArbitrationBook, ArbitrationError, ArbitrationEvent, DisputeCase, EvidenceFlags, OpenCase, TierChoice,
};
use crate::config::{ConfigViolation, EngineConfig, SlashTarget};
use crate::exchange::{
    Ctx, DisputeReason, DisputeSubject, DropoffTracking, ExchangeBook, ExchangeError, ExchangeEvent, ReceiptVia,
    Ruling, Session, Tracking,
};
use crate::governance::{
    CommitteeSubject, Direction, GovernanceBook, GovernanceError, GovernanceEvent, ProposalLevel, ProposalPayload,
    Signature,
};
use crate::incentives::{RewardBook, RewardError};
use crate::ledger::{usd_cents, AccountRole, ConservationReport, Ledger, LedgerError, TokenKind};
use crate::reputation::{Feedback, ReputationBook, ReputationError, ReputationReason, SessionParties};
use crate::rng::{substream, JUROR_DRAW, QR_NONCE};
use crate::types::{AccountId, Amount, Caller, CaseId, Day, ListingId, ProposalId, SessionId};

/// Every external input the engine accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    CreateAccount {
        role: AccountRole,
        label: String,
    },
    Genesis {
        account: AccountId,
        token: TokenKind,
        amount: Amount,
    },
    Transfer {
        from: AccountId,
        to: AccountId,
        token: TokenKind,
        amount: Amount,
    },
    Convert {
        account: AccountId,
        from: TokenKind,
        amount: Amount,
    },
    SetPayoutPreference {
        account: AccountId,
        token: Option<TokenKind>,
    },
    StakeDeposit {
        seller: AccountId,
        amount: Amount,
    },
    StakeWithdraw {
        seller: AccountId,
    },
    CourtStake {
        juror: AccountId,
        amount: Amount,
    },
    List {
        seller: AccountId,
        description: String,
        price: Amount,
        token: TokenKind,
        category: String,
    },
    Purchase {
        buyer: AccountId,
        listing: ListingId,
    },
    Validate {
        seller: AccountId,
        session: SessionId,
        accept: bool,
    },
    AgreeTerms {
        party: AccountId,
        session: SessionId,
    },
    FundEscrow {
        buyer: AccountId,
        session: SessionId,
    },
    IssueQr {
        seller: AccountId,
        session: SessionId,
    },
    PreparePackage {
        seller: AccountId,
        session: SessionId,
    },
    Dropoff {
        seller: AccountId,
        session: SessionId,
        qr_included: bool,
        tracking: DropoffTracking,
    },
    InformTracking {
        seller: AccountId,
        session: SessionId,
        tracking: DropoffTracking,
    },
    /// Carrier delivery report.
    Deliver {
        session: SessionId,
    },
    RequestQr {
        buyer: AccountId,
        session: SessionId,
    },
    AnswerQr {
        seller: AccountId,
        session: SessionId,
    },
    ConfirmReceipt {
        buyer: AccountId,
        session: SessionId,
        via: ReceiptVia,
    },
    Satisfaction {
        buyer: AccountId,
        session: SessionId,
        satisfied: bool,
    },
    ResolveMutually {
        party: AccountId,
        session: SessionId,
    },
    Claim {
        buyer: AccountId,
        session: SessionId,
        reason: DisputeReason,
        #[serde(default)]
        tier: TierChoice,
    },
    Cancel {
        party: AccountId,
        session: SessionId,
    },
    ConfirmReturn {
        seller: AccountId,
        session: SessionId,
    },
    Feedback(Feedback),
    PayFee {
        case: CaseId,
        payer: AccountId,
        amount: Amount,
    },
    SubmitEvidence {
        case: CaseId,
        submitter: AccountId,
        content_hash: String,
        #[serde(default)]
        attests_mismatch: bool,
    },
    CommitVote {
        case: CaseId,
        juror: AccountId,
        commitment: String,
    },
    RevealVote {
        case: CaseId,
        juror: AccountId,
        vote: Ruling,
        salt: String,
    },
    Appeal {
        case: CaseId,
        appellant: AccountId,
        fee: Amount,
    },
    RecordFounder {
        account: AccountId,
    },
    SetCommittee {
        members: Vec<AccountId>,
    },
    Propose {
        proposer: AccountId,
        level: ProposalLevel,
        payload: ProposalPayload,
    },
    Vote {
        voter: AccountId,
        proposal: ProposalId,
        direction: Direction,
    },
    Finalize {
        proposal: ProposalId,
    },
    CommitteeDecide {
        subject: CommitteeSubject,
        signatures: Vec<(AccountId, Signature)>,
    },
    Queue {
        proposal: ProposalId,
    },
    Execute {
        proposal: ProposalId,
    },
    Delegate {
        delegator: AccountId,
        delegatee: AccountId,
    },
    Undelegate {
        delegator: AccountId,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid configuration: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<ConfigViolation>),
    #[error("clock cannot move back from day {from} to day {to}")]
    ClockRegression { from: Day, to: Day },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
    #[error(transparent)]
    Reputation(#[from] ReputationError),
    #[error(transparent)]
    Arbitration(#[from] ArbitrationError),
    #[error(transparent)]
    Governance(#[from] GovernanceError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
}

pub type EngineResult<T> = Result<T, EngineError>;

/// One journaled record: the emitting module and the event body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub day: Day,
    pub module: String,
    pub event: Value,
}

pub const MODULE_ENGINE: &str = "engine";

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum EngineEvent<'a> {
    Command { command: &'a Command },
    Tick { day: Day },
    Rejected { error: String },
    ConfigChanged { proposal: ProposalId },
    StakeSlashed { case: CaseId, seller: AccountId, amount: Amount, beneficiary: Option<AccountId> },
    Supply { report: &'a ConservationReport, holds: bool },
}

pub struct Engine {
    config: EngineConfig,
    seed: u64,
    day: Day,
    ledger: Ledger,
    reputation: ReputationBook,
    exchange: ExchangeBook,
    arbitration: ArbitrationBook,
    governance: GovernanceBook,
    rewards: RewardBook,
    qr_rng: ChaCha20Rng,
    juror_rng: ChaCha20Rng,
    tier_choice: BTreeMap<SessionId, TierChoice>,
    case_of: BTreeMap<SessionId, CaseId>,
    journal: Vec<Record>,
}

impl Engine {
    pub fn new(config: EngineConfig, seed: u64) -> EngineResult<Self> {
        let violations = config.validate();
        if !violations.is_empty() {
            return Err(EngineError::InvalidConfig(violations));
        }
        Ok(Engine {
            config,
            seed,
            day: 0,
            ledger: Ledger::new(),
            reputation: ReputationBook::new(),
            exchange: ExchangeBook::new(),
            arbitration: ArbitrationBook::new(),
            governance: GovernanceBook::new(),
            rewards: RewardBook::new(),
            qr_rng: substream(seed, QR_NONCE),
            juror_rng: substream(seed, JUROR_DRAW),
            tier_choice: BTreeMap::new(),
            case_of: BTreeMap::new(),
            journal: Vec::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn day(&self) -> Day {
        self.day
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn reputation(&self) -> &ReputationBook {
        &self.reputation
    }

    pub fn exchange(&self) -> &ExchangeBook {
        &self.exchange
    }

    pub fn arbitration(&self) -> &ArbitrationBook {
        &self.arbitration
    }

    pub fn governance(&self) -> &GovernanceBook {
        &self.governance
    }

    pub fn rewards(&self) -> &RewardBook {
        &self.rewards
    }

    pub fn case_for(&self, session: SessionId) -> Option<CaseId> {
        self.case_of.get(&session).copied()
    }

    pub fn drain(&mut self) -> Vec<Record> {
        std::mem::take(&mut self.journal)
    }

    fn emit<T: Serialize>(&mut self, module: &str, event: &T) {
        let event = serde_json::to_value(event).expect("events serialize");
        self.journal.push(Record {
            day: self.day,
            module: module.to_string(),
            event,
        });
    }

    /// For events without their own `type` tag.
    fn emit_as<T: Serialize>(&mut self, module: &str, kind: &str, event: &T) {
        let mut event = serde_json::to_value(event).expect("events serialize");
        if let Value::Object(m) = &mut event {
            m.insert("type".into(), Value::String(kind.into()));
        }
        self.journal.push(Record {
            day: self.day,
            module: module.to_string(),
            event,
        });
    }

    fn flush_side_journals(&mut self) {
        for e in self.ledger.drain_journal() {
            self.emit("ledger", &e);
        }
        for e in self.reputation.drain_journal() {
            self.emit_as("reputation", "score_changed", &e);
        }
    }

    /// Applies one command. A rejected command is journaled with its error
    /// and leaves the clock untouched.
    pub fn apply(&mut self, command: Command) -> EngineResult<()> {
        self.emit(MODULE_ENGINE, &EngineEvent::Command { command: &command });
        let result = self.dispatch(&command).and_then(|_| self.refresh_membership());
        self.flush_side_journals();
        if let Err(e) = &result {
            let error = e.to_string();
            self.emit(MODULE_ENGINE, &EngineEvent::Rejected { error });
        }
        result
    }

    /// Advances the clock to `day` and fires every due timeout.
    pub fn tick(&mut self, day: Day) -> EngineResult<()> {
        if day < self.day {
            return Err(EngineError::ClockRegression { from: self.day, to: day });
        }
        self.day = day;
        self.emit(MODULE_ENGINE, &EngineEvent::Tick { day });
        let result = self.run_timeouts().and_then(|_| self.refresh_membership());
        self.flush_side_journals();
        if let Err(e) = &result {
            let error = e.to_string();
            self.emit(MODULE_ENGINE, &EngineEvent::Rejected { error });
        }
        let report = self.ledger.conservation_report();
        let holds = report.holds();
        self.emit("ledger", &EngineEvent::Supply { report: &report, holds });
        result
    }

    fn run_timeouts(&mut self) -> EngineResult<()> {
        let events = {
            let mut ctx = Ctx {
                ledger: &mut self.ledger,
                reputation: &mut self.reputation,
                config: &self.config,
                day: self.day,
            };
            self.exchange.tick(&mut ctx, &mut self.qr_rng)?
        };
        self.after_exchange(events)?;
        let events = {
            let exchange = &self.exchange;
            let flags = |case: &DisputeCase| evidence_flags(exchange, case);
            self.arbitration.tick(
                &mut self.ledger,
                &self.config.arbitration,
                self.day,
                &mut self.juror_rng,
                &flags,
            )?
        };
        self.after_arbitration(events)
    }

    fn refresh_membership(&mut self) -> EngineResult<()> {
        let events = self
            .governance
            .refresh_membership(&mut self.ledger, &self.reputation, &self.config.governance)?;
        self.after_governance(events);
        Ok(())
    }

    /// Evidence flags the internal table would see for `case` now.
    pub fn evidence_flags(&self, case: CaseId) -> Option<EvidenceFlags> {
        let case = self.arbitration.case(case)?;
        Some(evidence_flags(&self.exchange, case))
    }

    fn exchange_op<T>(
        &mut self,
        op: impl FnOnce(&mut ExchangeBook, &mut Ctx<'_>, &mut ChaCha20Rng) -> Result<T, ExchangeError>,
    ) -> EngineResult<T> {
        let mut ctx = Ctx {
            ledger: &mut self.ledger,
            reputation: &mut self.reputation,
            config: &self.config,
            day: self.day,
        };
        Ok(op(&mut self.exchange, &mut ctx, &mut self.qr_rng)?)
    }

    fn dispatch(&mut self, command: &Command) -> EngineResult<()> {
        let day = self.day;
        match command.clone() {
            Command::CreateAccount { role, label } => {
                let id = self.ledger.create_account(role, label);
                self.reputation.init(id, &self.config.reputation)?;
            }
            Command::Genesis { account, token, amount } => self.ledger.genesis(account, token, amount)?,
            Command::Transfer { from, to, token, amount } => {
                self.ledger.transfer(from, to, amount, token)?;
            }
            Command::Convert { account, from, amount } => {
                let rate = self.config.ledger.rate_at(day);
                self.ledger.convert(account, from, amount, rate)?;
            }
            Command::SetPayoutPreference { account, token } => self.ledger.set_payout_preference(account, token)?,
            Command::StakeDeposit { seller, amount } => {
                let cfg = &self.config.ledger;
                self.ledger
                    .stake_deposit(seller, amount, cfg.stake_duration_days, day, cfg.min_seller_stake)?;
            }
            Command::StakeWithdraw { seller } => {
                // Withdrawal would strand open sessions without collateral.
                if self.exchange.open_sessions_of(seller) > 0 {
                    return Err(LedgerError::StakeLocked { account: seller, until: day }.into());
                }
                self.ledger.stake_withdraw(seller, day, self.config.ledger.stake_yield_ppm)?;
            }
            Command::CourtStake { juror, amount } => self.ledger.court_stake_deposit(juror, amount)?,
            Command::List {
                seller,
                description,
                price,
                token,
                category,
            } => {
                let (_, ev) =
                    self.exchange_op(|x, c, _| x.list_item(c, seller, &description, price, token, &category))?;
                self.after_exchange(ev)?;
            }
            Command::Purchase { buyer, listing } => {
                let (_, ev) = self.exchange_op(|x, c, _| x.request_purchase(c, buyer, listing))?;
                self.after_exchange(ev)?;
            }
            Command::Validate { seller, session, accept } => {
                let ev = self.exchange_op(|x, c, _| x.validate_sale(c, seller, session, accept))?;
                self.after_exchange(ev)?;
            }
            Command::AgreeTerms { party, session } => {
                let ev = self.exchange_op(|x, c, _| x.agree_terms(c, party, session))?;
                self.after_exchange(ev)?;
            }
            Command::FundEscrow { buyer, session } => {
                let ev = self.exchange_op(|x, c, _| x.fund_escrow(c, buyer, session))?;
                self.after_exchange(ev)?;
            }
            Command::IssueQr { seller, session } => {
                let ev = self.exchange_op(|x, c, r| x.issue_qr(c, seller, session, r))?;
                self.after_exchange(ev)?;
            }
            Command::PreparePackage { seller, session } => {
                let ev = self.exchange_op(|x, c, _| x.prepare_package(c, seller, session))?;
                self.after_exchange(ev)?;
            }
            Command::Dropoff {
                seller,
                session,
                qr_included,
                tracking,
            } => {
                let ev = self.exchange_op(|x, c, _| x.confirm_dropoff(c, seller, session, qr_included, tracking))?;
                self.after_exchange(ev)?;
            }
            Command::InformTracking {
                seller,
                session,
                tracking,
            } => {
                let ev = self.exchange_op(|x, c, _| x.inform_tracking(c, seller, session, tracking))?;
                self.after_exchange(ev)?;
            }
            Command::Deliver { session } => {
                let ev = self.exchange_op(|x, c, _| x.mark_delivered(c, session))?;
                self.after_exchange(ev)?;
            }
            Command::RequestQr { buyer, session } => {
                let ev = self.exchange_op(|x, c, _| x.request_qr(c, buyer, session))?;
                self.after_exchange(ev)?;
            }
            Command::AnswerQr { seller, session } => {
                let ev = self.exchange_op(|x, c, _| x.answer_qr(c, seller, session))?;
                self.after_exchange(ev)?;
            }
            Command::ConfirmReceipt { buyer, session, via } => {
                let ev = self.exchange_op(|x, c, _| x.confirm_receipt(c, buyer, session, via))?;
                self.after_exchange(ev)?;
            }
            Command::Satisfaction {
                buyer,
                session,
                satisfied,
            } => {
                let ev = self.exchange_op(|x, c, _| x.answer_satisfaction(c, buyer, session, satisfied))?;
                self.after_exchange(ev)?;
            }
            Command::ResolveMutually { party, session } => {
                let ev = self.exchange_op(|x, c, _| x.resolve_mutually(c, party, session))?;
                self.after_exchange(ev)?;
            }
            Command::Claim {
                buyer,
                session,
                reason,
                tier,
            } => {
                let ev = self.exchange_op(|x, c, _| x.claim(c, buyer, session, reason))?;
                self.tier_choice.insert(session, tier);
                self.after_exchange(ev)?;
            }
            Command::Cancel { party, session } => {
                let ev = self.exchange_op(|x, c, _| x.cancel(c, party, session))?;
                self.after_exchange(ev)?;
            }
            Command::ConfirmReturn { seller, session } => {
                let ev = self.exchange_op(|x, c, _| x.confirm_return(c, seller, session))?;
                self.after_exchange(ev)?;
            }
            Command::Feedback(feedback) => {
                let s = self
                    .exchange
                    .session(feedback.session)
                    .ok_or(EngineError::UnknownSession(feedback.session))?;
                let parties = SessionParties {
                    buyer: s.buyer,
                    seller: s.seller,
                    terminal: s.state.is_terminal(),
                };
                self.reputation
                    .apply_feedback(&feedback, parties, day, &self.config.reputation)?;
            }
            Command::PayFee { case, payer, amount } => {
                let ev = self
                    .arbitration
                    .pay_fee(&mut self.ledger, &self.config.arbitration, case, payer, amount, day)?;
                self.after_arbitration(ev)?;
            }
            Command::SubmitEvidence {
                case,
                submitter,
                content_hash,
                attests_mismatch,
            } => {
                let ev = self
                    .arbitration
                    .submit_evidence(case, submitter, &content_hash, attests_mismatch, day);
                match ev {
                    Ok(ev) => self.after_arbitration(ev)?,
                    Err(ArbitrationError::EvidenceClosed) => {
                        self.emit(
                            "arbitration",
                            &ArbitrationEvent::EvidenceRejected {
                                case,
                                submitter,
                                content_hash,
                            },
                        );
                        return Err(ArbitrationError::EvidenceClosed.into());
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            Command::CommitVote {
                case,
                juror,
                commitment,
            } => {
                let ev = self.arbitration.commit_vote(case, juror, &commitment, day)?;
                self.after_arbitration(ev)?;
            }
            Command::RevealVote { case, juror, vote, salt } => {
                let ev = self.arbitration.reveal_vote(case, juror, vote, &salt, day)?;
                self.after_arbitration(ev)?;
            }
            Command::Appeal { case, appellant, fee } => {
                let ev = self.arbitration.appeal(
                    &mut self.ledger,
                    &self.config.arbitration,
                    case,
                    appellant,
                    fee,
                    day,
                    &mut self.juror_rng,
                )?;
                self.after_arbitration(ev)?;
            }
            Command::RecordFounder { account } => {
                self.ledger.account(account)?;
                self.governance.record_founder(account);
            }
            Command::SetCommittee { members } => {
                self.governance.set_committee(members, day, &self.config.governance)?;
            }
            Command::Propose {
                proposer,
                level,
                payload,
            } => {
                let (_, ev) = self
                    .governance
                    .submit_proposal(&mut self.ledger, &self.config, proposer, level, payload, day)?;
                self.after_governance(ev);
            }
            Command::Vote {
                voter,
                proposal,
                direction,
            } => {
                let ev = self
                    .governance
                    .vote(&self.ledger, &self.config.governance, voter, proposal, direction, day)?;
                self.after_governance(ev);
            }
            Command::Finalize { proposal } => {
                let ev = self.governance.finalize(&self.ledger, &self.config.governance, proposal, day)?;
                self.after_governance(ev);
            }
            Command::CommitteeDecide { subject, signatures } => {
                let ev = self.governance.committee_decide(
                    &mut self.ledger,
                    &self.config.governance,
                    subject,
                    &signatures,
                    day,
                )?;
                self.after_governance(ev);
            }
            Command::Queue { proposal } => {
                let ev = self.governance.queue(proposal, day)?;
                self.after_governance(ev);
            }
            Command::Execute { proposal } => {
                let (next, ev) = self.governance.execute(&self.config, proposal, day)?;
                self.after_governance(ev);
                if let Some(next) = next {
                    self.config = next;
                    self.emit(MODULE_ENGINE, &EngineEvent::ConfigChanged { proposal });
                }
            }
            Command::Delegate { delegator, delegatee } => {
                let ev = self.governance.delegate(
                    &mut self.ledger,
                    &self.reputation,
                    &self.config.governance,
                    delegator,
                    delegatee,
                    day,
                )?;
                self.after_governance(ev);
            }
            Command::Undelegate { delegator } => {
                let ev = self.governance.undelegate(&mut self.ledger, delegator)?;
                self.after_governance(ev);
            }
        }
        Ok(())
    }

    fn after_governance(&mut self, events: Vec<GovernanceEvent>) {
        self.flush_side_journals();
        for e in events {
            self.emit("governance", &e);
        }
    }

    /// Journals exchange events and follows up on terminal outcomes and
    /// dispute requests.
    fn after_exchange(&mut self, events: Vec<ExchangeEvent>) -> EngineResult<()> {
        self.flush_side_journals();
        let mut queue: VecDeque<ExchangeEvent> = events.into();
        while let Some(event) = queue.pop_front() {
            self.emit("exchange", &event);
            match event {
                ExchangeEvent::Terminal { session, .. } => {
                    let s = self.session(session)?.clone();
                    let mints = self
                        .rewards
                        .grant_rewards(&mut self.ledger, &s, &self.config.rewards)?;
                    self.flush_side_journals();
                    for m in mints {
                        self.emit_as("incentives", "reward_minted", &m);
                    }
                }
                ExchangeEvent::DisputeRequired {
                    session,
                    reason,
                    subject,
                    amount,
                    force_internal,
                } => {
                    self.open_dispute(session, reason, subject, amount, force_internal)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn session(&self, id: SessionId) -> EngineResult<&Session> {
        self.exchange.session(id).ok_or(EngineError::UnknownSession(id))
    }

    fn open_dispute(
        &mut self,
        session: SessionId,
        reason: DisputeReason,
        subject: DisputeSubject,
        amount: Amount,
        force_internal: bool,
    ) -> EngineResult<()> {
        let s = self.session(session)?;
        let rate = self.config.ledger.rate_at(self.day);
        let value = match subject {
            DisputeSubject::Escrow => s.value_usd_cents,
            DisputeSubject::Clawback => usd_cents(amount, s.token, rate),
        };
        let req = OpenCase {
            session,
            claimant: s.buyer,
            respondent: s.seller,
            value_usd_cents: value,
            amount,
            reason,
            subject,
            choice: self.tier_choice.remove(&session).unwrap_or_default(),
            force_internal,
        };
        let (case, events) = self.arbitration.open_case(&self.config.arbitration, req, self.day);
        self.case_of.insert(session, case);
        self.after_arbitration(events)
    }

    fn after_arbitration(&mut self, events: Vec<ArbitrationEvent>) -> EngineResult<()> {
        self.flush_side_journals();
        for event in events {
            self.emit("arbitration", &event);
            if let ArbitrationEvent::RulingFinal {
                case,
                session,
                ruling,
                subject,
                ..
            } = event
            {
                self.execute_ruling(case, session, ruling, subject)?;
            }
        }
        Ok(())
    }

    /// Escrow disposition, the loser's reputation penalty and, when the
    /// seller loses over the escrow, the seller stake.
    fn execute_ruling(
        &mut self,
        case: CaseId,
        session: SessionId,
        ruling: Ruling,
        subject: DisputeSubject,
    ) -> EngineResult<()> {
        let c = self.arbitration.case(case).expect("case exists").clone();
        let ev = self.exchange_op(|x, ctx, _| x.apply_ruling(ctx, session, ruling, subject, c.amount))?;
        let loser = c.loser(ruling);
        self.reputation.penalize(
            Caller::Arbitration,
            loser,
            ReputationReason::Arbitration,
            self.config.reputation.arbitration_penalty,
            self.day,
            Some(session),
        )?;
        if ruling == Ruling::ForClaimant && subject == DisputeSubject::Escrow {
            let seller = c.respondent;
            if self.ledger.account(seller)?.has_active_stake() {
                let beneficiary = match self.config.ledger.slash_target {
                    SlashTarget::Buyer => Some(c.claimant),
                    SlashTarget::Burn => None,
                };
                let amount = self.ledger.slash_stake(Caller::Arbitration, seller, beneficiary)?;
                self.flush_side_journals();
                self.emit(
                    MODULE_ENGINE,
                    &EngineEvent::StakeSlashed {
                        case,
                        seller,
                        amount,
                        beneficiary,
                    },
                );
            }
        }
        self.after_exchange(ev)
    }
}

/// Tracking, delivery, return and mismatch flags for the internal table.
pub fn evidence_flags(exchange: &ExchangeBook, case: &DisputeCase) -> EvidenceFlags {
    let s = exchange.session(case.session);
    EvidenceFlags {
        tracking_informed: s.is_some_and(|s| matches!(s.tracking, Tracking::Informed(_))),
        delivery_evidence: s.is_some_and(|s| s.delivered),
        return_received: case.subject == DisputeSubject::Clawback
            && s.is_some_and(|s| s.return_request.as_ref().is_some_and(|r| r.completed)),
        mismatch_attested: case.mismatch_attested(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exchange::{ExchangeState, OutcomeKind};
    use crate::types::tokens;

    struct Setup {
        engine: Engine,
        buyer: AccountId,
        seller: AccountId,
    }

    fn setup() -> Setup {
        let mut engine = Engine::new(EngineConfig::default(), 1).unwrap();
        engine
            .apply(Command::CreateAccount { role: AccountRole::Buyer, label: "b".into() })
            .unwrap();
        engine
            .apply(Command::CreateAccount { role: AccountRole::Seller, label: "s".into() })
            .unwrap();
        let (buyer, seller) = (AccountId(0), AccountId(1));
        for a in [buyer, seller] {
            engine
                .apply(Command::Genesis { account: a, token: TokenKind::Lzs, amount: tokens(1_000) })
                .unwrap();
        }
        engine.apply(Command::StakeDeposit { seller, amount: tokens(500) }).unwrap();
        Setup { engine, buyer, seller }
    }

    fn to_delivered(st: &mut Setup) -> SessionId {
        let (b, s) = (st.buyer, st.seller);
        let e = &mut st.engine;
        e.apply(Command::List {
            seller: s,
            description: "lamp".into(),
            price: tokens(40),
            token: TokenKind::Lzs,
            category: "home".into(),
        })
        .unwrap();
        e.apply(Command::Purchase { buyer: b, listing: ListingId(0) }).unwrap();
        let id = SessionId(0);
        e.apply(Command::Validate { seller: s, session: id, accept: true }).unwrap();
        e.apply(Command::AgreeTerms { party: b, session: id }).unwrap();
        e.apply(Command::FundEscrow { buyer: b, session: id }).unwrap();
        e.apply(Command::IssueQr { seller: s, session: id }).unwrap();
        e.apply(Command::Dropoff {
            seller: s,
            session: id,
            qr_included: true,
            tracking: DropoffTracking::Informed("TRK1".into()),
        })
        .unwrap();
        e.apply(Command::Deliver { session: id }).unwrap();
        id
    }

    #[test]
    fn honest_exchange_mints_rewards() {
        let mut st = setup();
        let id = to_delivered(&mut st);
        let nonce = st.engine.exchange().session(id).unwrap().qr.clone().unwrap().value;
        let b = st.buyer;
        st.engine
            .apply(Command::ConfirmReceipt { buyer: b, session: id, via: ReceiptVia::Scan(nonce) })
            .unwrap();
        st.engine
            .apply(Command::Satisfaction { buyer: b, session: id, satisfied: true })
            .unwrap();
        let s = st.engine.exchange().session(id).unwrap();
        assert_eq!(s.state, ExchangeState::Settled);
        assert!(st.engine.ledger().balance(b, TokenKind::Lzsp) > 0);
        assert!(st.engine.ledger().conservation_report().holds());
        let journal = st.engine.drain();
        assert!(journal.iter().any(|r| r.module == "incentives"));
    }

    #[test]
    fn internal_claim_resolves_on_tick_and_slashes() {
        let mut st = setup();
        let id = to_delivered(&mut st);
        let b = st.buyer;
        st.engine
            .apply(Command::Claim {
                buyer: b,
                session: id,
                reason: DisputeReason::WrongItem,
                tier: TierChoice::Auto,
            })
            .unwrap();
        let case = st.engine.case_for(id).unwrap();
        st.engine
            .apply(Command::SubmitEvidence {
                case,
                submitter: b,
                content_hash: "aa".into(),
                attests_mismatch: true,
            })
            .unwrap();
        let until = st.engine.config().arbitration.evidence_period + 1;
        st.engine.tick(until).unwrap();
        let s = st.engine.exchange().session(id).unwrap();
        assert_eq!(s.outcome.unwrap().kind, OutcomeKind::Arbitrated { ruling: Ruling::ForClaimant });
        // Escrow refunded and the 500 LZS stake paid to the buyer.
        assert_eq!(st.engine.ledger().balance(b, TokenKind::Lzs), tokens(1_500));
        assert!(!st.engine.ledger().account(st.seller).unwrap().has_active_stake());
        assert!(st.engine.ledger().conservation_report().holds());
    }

    #[test]
    fn rejected_commands_are_journaled() {
        let mut st = setup();
        st.engine.drain();
        let err = st.engine.apply(Command::Deliver { session: SessionId(9) });
        assert!(err.is_err());
        let j = st.engine.drain();
        assert_eq!(j.len(), 2);
        assert_eq!(j[1].event["type"], "rejected");
        assert!(matches!(st.engine.tick(0), Ok(())));
        st.engine.tick(3).unwrap();
        assert!(matches!(st.engine.tick(2), Err(EngineError::ClockRegression { .. })));
    }
}
