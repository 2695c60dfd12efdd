//! DAO governance: membership layers, LZSP-weighted proposals with a vote
//! cap, delegation, a five-seat committee with veto power, and execution of
//! approved proposals as engine configuration patches.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigViolation, EngineConfig, GovernanceConfig, QuorumRule};
use crate::ledger::{Ledger, LedgerError, TokenKind};
use crate::reputation::ReputationBook;
use crate::types::{apply_ppm, AccountId, Amount, Caller, Day, ProposalId, PPM};

pub const COMMITTEE_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GovernanceLayer {
    Basic,
    Member,
    Delegate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalLevel {
    LowMedium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalState {
    Created,
    Active,
    Approved,
    Vetoed,
    Queued,
    Executed,
    Rejected,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Up,
    Down,
}

/// Each target is a dotted configuration path, each value its new JSON
/// value, each signature the operation (only `set`). Calldata is carried
/// along for the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalPayload {
    pub targets: Vec<String>,
    pub values: Vec<serde_json::Value>,
    pub signatures: Vec<String>,
    #[serde(default)]
    pub calldata: Vec<String>,
    pub description: String,
}

impl ProposalPayload {
    pub fn set(target: &str, value: serde_json::Value, description: &str) -> Self {
        ProposalPayload {
            targets: vec![target.to_string()],
            values: vec![value],
            signatures: vec!["set".into()],
            calldata: Vec::new(),
            description: description.to_string(),
        }
    }

    fn check(&self, config: &EngineConfig) -> Result<(), String> {
        if self.targets.is_empty() {
            return Err("no targets".into());
        }
        if self.values.len() != self.targets.len() || self.signatures.len() != self.targets.len() {
            return Err("targets, values and signatures differ in length".into());
        }
        if !self.calldata.is_empty() && self.calldata.len() != self.targets.len() {
            return Err("calldata length differs from targets".into());
        }
        if self.description.trim().is_empty() {
            return Err("empty description".into());
        }
        if let Some(sig) = self.signatures.iter().find(|s| s.as_str() != "set") {
            return Err(format!("unsupported operation {sig:?}"));
        }
        let current = serde_json::to_value(config).map_err(|e| e.to_string())?;
        for t in &self.targets {
            if current.pointer(&pointer(t)).is_none() {
                return Err(format!("unknown configuration path {t:?}"));
            }
        }
        Ok(())
    }
}

fn pointer(path: &str) -> String {
    format!("/{}", path.replace('.', "/"))
}

/// Applies the payload to a copy of `config`. Fails if a value has the
/// wrong shape or the result violates a configuration bound.
pub fn apply_patch(config: &EngineConfig, payload: &ProposalPayload) -> Result<EngineConfig, String> {
    let mut tree = serde_json::to_value(config).map_err(|e| e.to_string())?;
    for (target, value) in payload.targets.iter().zip(&payload.values) {
        let slot = tree
            .pointer_mut(&pointer(target))
            .ok_or_else(|| format!("unknown configuration path {target:?}"))?;
        *slot = value.clone();
    }
    let next: EngineConfig = serde_json::from_value(tree).map_err(|e| e.to_string())?;
    let violations = next.validate();
    if !violations.is_empty() {
        return Err(violations
            .iter()
            .map(ConfigViolation::to_string)
            .collect::<Vec<_>>()
            .join("; "));
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub id: ProposalId,
    pub proposer: AccountId,
    pub level: ProposalLevel,
    pub payload: ProposalPayload,
    pub state: ProposalState,
    pub up: Amount,
    pub down: Amount,
    pub voters: BTreeSet<AccountId>,
    pub created: Day,
    pub closes_at: Day,
    pub decided: Option<Day>,
    pub veto_deadline: Option<Day>,
    /// Committee ratification of a high-level proposal.
    pub ratified: Option<bool>,
    pub quorum: Option<Amount>,
    pub failure: Option<String>,
    pub history: Vec<(Day, ProposalState)>,
}

impl Proposal {
    fn enter(&mut self, state: ProposalState, day: Day) {
        self.state = state;
        self.history.push((day, state));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Signature {
    Yes,
    No,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "proposal")]
pub enum CommitteeSubject {
    Ratify(ProposalId),
    Veto(ProposalId),
    Miscategorization(ProposalId),
}

impl CommitteeSubject {
    pub fn proposal(self) -> ProposalId {
        match self {
            CommitteeSubject::Ratify(p) | CommitteeSubject::Veto(p) | CommitteeSubject::Miscategorization(p) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Committee {
    pub members: Vec<AccountId>,
    pub term_start: Day,
    pub term_length: Day,
}

/// Quorum counts cast signatures against the five seats; agreement is the
/// yes share of the cast ones. Both compare in integer ppm.
pub fn committee_approves(cast: usize, yes: usize, cfg: &GovernanceConfig) -> bool {
    if cast == 0 {
        return false;
    }
    let quorum_ok = cast as u64 * PPM >= cfg.committee_quorum_ppm as u64 * COMMITTEE_SIZE as u64;
    let share = yes as u64 * PPM;
    let needed = cfg.committee_agreement_ppm as u64 * cast as u64;
    let agreement_ok = if cfg.committee_agreement_inclusive {
        share >= needed
    } else {
        share > needed
    };
    quorum_ok && agreement_ok
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delegation {
    pub delegator: AccountId,
    pub delegatee: AccountId,
    pub amount: Amount,
    pub since: Day,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GovernanceEvent {
    ProposalCreated {
        proposal: ProposalId,
        proposer: AccountId,
        level: ProposalLevel,
        fee: Amount,
        closes_at: Day,
    },
    ProposalState {
        proposal: ProposalId,
        state: ProposalState,
    },
    Voted {
        proposal: ProposalId,
        voter: AccountId,
        direction: Direction,
        weight: Amount,
    },
    Finalized {
        proposal: ProposalId,
        up: Amount,
        down: Amount,
        quorum: Amount,
        approved: bool,
    },
    CommitteeDecision {
        subject: CommitteeSubject,
        cast: usize,
        yes: usize,
        approved: bool,
    },
    Executed {
        proposal: ProposalId,
        targets: Vec<String>,
    },
    ExecutionFailed {
        proposal: ProposalId,
        reason: String,
    },
    Delegated {
        delegator: AccountId,
        delegatee: AccountId,
        amount: Amount,
    },
    Undelegated {
        delegator: AccountId,
        amount: Amount,
    },
    LayerChanged {
        account: AccountId,
        from: GovernanceLayer,
        to: GovernanceLayer,
    },
    MiscategorizationPenalty {
        proposer: AccountId,
        offense: u32,
        burned: Amount,
        blacklisted_until: Option<Day>,
        permanent: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GovernanceError {
    #[error("{account} holds {held} LZSP, needs {needed}")]
    InsufficientLZSP { account: AccountId, held: Amount, needed: Amount },
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("unknown proposal {0}")]
    UnknownProposal(ProposalId),
    #[error("proposal {0} is not open for voting")]
    NotActive(ProposalId),
    #[error("{0} is not a member")]
    NotAMember(AccountId),
    #[error("{voter} already voted on {proposal}")]
    AlreadyVoted { voter: AccountId, proposal: ProposalId },
    #[error("proposal {proposal} stays active until day {closes_at}")]
    StillActive { proposal: ProposalId, closes_at: Day },
    #[error("{0} is not on the committee")]
    NotCommitteeMember(AccountId),
    #[error("{0} signed twice")]
    DuplicateSignature(AccountId),
    #[error("proposal {0} was not approved")]
    NotApproved(ProposalId),
    #[error("proposal {0} is not queued")]
    NotQueued(ProposalId),
    #[error("proposal {0} was vetoed")]
    Vetoed(ProposalId),
    #[error("veto window for {proposal} runs until day {until}")]
    VetoWindowOpen { proposal: ProposalId, until: Day },
    #[error("veto window for {proposal} closed on day {until}")]
    VetoWindowClosed { proposal: ProposalId, until: Day },
    #[error("delegatee {0} is below the reputation threshold")]
    LowReputationDelegatee(AccountId),
    #[error("cannot delegate to oneself")]
    SelfDelegation,
    #[error("{0} has delegated its weight and cannot vote")]
    DelegationActive(AccountId),
    #[error("{0} has no active delegation")]
    NoDelegation(AccountId),
    #[error("{0} is blacklisted from proposing")]
    Blacklisted(AccountId),
    #[error("committee needs exactly {COMMITTEE_SIZE} distinct members")]
    CommitteeSize,
    #[error("committee subject does not apply to proposal {0} in its state")]
    SubjectNotApplicable(ProposalId),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

pub type GovernanceResult<T> = Result<T, GovernanceError>;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GovernanceBook {
    proposals: BTreeMap<ProposalId, Proposal>,
    next_proposal: u64,
    committee: Option<Committee>,
    /// Accounts with an accepted proposal on record.
    accepted: BTreeSet<AccountId>,
    layers: BTreeMap<AccountId, GovernanceLayer>,
    delegations: BTreeMap<AccountId, Delegation>,
    offenses: BTreeMap<AccountId, u32>,
    /// `None` means permanent.
    blacklist: BTreeMap<AccountId, Option<Day>>,
}

impl GovernanceBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn proposal(&self, id: ProposalId) -> Option<&Proposal> {
        self.proposals.get(&id)
    }

    pub fn proposals(&self) -> impl Iterator<Item = &Proposal> {
        self.proposals.values()
    }

    pub fn committee(&self) -> Option<&Committee> {
        self.committee.as_ref()
    }

    pub fn delegations(&self) -> impl Iterator<Item = &Delegation> {
        self.delegations.values()
    }

    pub fn layer(&self, account: AccountId) -> GovernanceLayer {
        self.layers.get(&account).copied().unwrap_or(GovernanceLayer::Basic)
    }

    pub fn is_member(&self, account: AccountId) -> bool {
        self.layer(account) != GovernanceLayer::Basic
    }

    pub fn layers(&self) -> &BTreeMap<AccountId, GovernanceLayer> {
        &self.layers
    }

    pub fn set_committee(&mut self, members: Vec<AccountId>, term_start: Day, cfg: &GovernanceConfig) -> GovernanceResult<()> {
        let distinct: BTreeSet<_> = members.iter().collect();
        if members.len() != COMMITTEE_SIZE || distinct.len() != COMMITTEE_SIZE {
            return Err(GovernanceError::CommitteeSize);
        }
        self.committee = Some(Committee {
            members,
            term_start,
            term_length: cfg.committee_term_days,
        });
        Ok(())
    }

    /// Founding members start with an accepted proposal on record.
    pub fn record_founder(&mut self, account: AccountId) {
        self.accepted.insert(account);
    }

    fn meets_requirements(
        &self,
        account: AccountId,
        ledger: &Ledger,
        reputation: &ReputationBook,
        cfg: &GovernanceConfig,
    ) -> bool {
        self.accepted.contains(&account)
            && ledger.lzsp_holdings(account) >= cfg.membership_lzsp
            && reputation.score(account).unwrap_or(0) >= cfg.membership_reputation
    }

    /// Recomputes every layer. Demoted accounts lose their delegations in
    /// both directions.
    pub fn refresh_membership(
        &mut self,
        ledger: &mut Ledger,
        reputation: &ReputationBook,
        cfg: &GovernanceConfig,
    ) -> GovernanceResult<Vec<GovernanceEvent>> {
        let mut events = Vec::new();
        let candidates: BTreeSet<AccountId> = self
            .accepted
            .iter()
            .chain(self.layers.keys())
            .copied()
            .collect();
        let mut demoted = Vec::new();
        for account in candidates {
            let member = self.meets_requirements(account, ledger, reputation, cfg);
            let next = match (member, self.delegations.contains_key(&account)) {
                (false, _) => GovernanceLayer::Basic,
                (true, true) => GovernanceLayer::Delegate,
                (true, false) => GovernanceLayer::Member,
            };
            let prev = self.layer(account);
            if next != prev {
                if next == GovernanceLayer::Basic {
                    self.layers.remove(&account);
                    demoted.push(account);
                } else {
                    self.layers.insert(account, next);
                }
                events.push(GovernanceEvent::LayerChanged {
                    account,
                    from: prev,
                    to: next,
                });
            }
        }
        for account in demoted {
            let links: Vec<AccountId> = self
                .delegations
                .values()
                .filter(|d| d.delegator == account || d.delegatee == account)
                .map(|d| d.delegator)
                .collect();
            for delegator in links {
                events.extend(self.drop_delegation(ledger, delegator)?);
                if self.is_member(delegator) {
                    self.layers.insert(delegator, GovernanceLayer::Member);
                    events.push(GovernanceEvent::LayerChanged {
                        account: delegator,
                        from: GovernanceLayer::Delegate,
                        to: GovernanceLayer::Member,
                    });
                }
            }
        }
        Ok(events)
    }

    fn is_blacklisted(&self, account: AccountId, day: Day) -> bool {
        match self.blacklist.get(&account) {
            None => false,
            Some(None) => true,
            Some(Some(until)) => day <= *until,
        }
    }

    pub fn period(level: ProposalLevel, cfg: &GovernanceConfig) -> Day {
        match level {
            ProposalLevel::LowMedium => cfg.low_medium_period,
            ProposalLevel::High => cfg.high_period,
        }
    }

    /// Any LZSP holder may submit a low/medium proposal; high-level ones
    /// need membership. The fee is burned.
    pub fn submit_proposal(
        &mut self,
        ledger: &mut Ledger,
        config: &EngineConfig,
        proposer: AccountId,
        level: ProposalLevel,
        payload: ProposalPayload,
        day: Day,
    ) -> GovernanceResult<(ProposalId, Vec<GovernanceEvent>)> {
        let cfg = &config.governance;
        if self.is_blacklisted(proposer, day) {
            return Err(GovernanceError::Blacklisted(proposer));
        }
        if level == ProposalLevel::High && !self.is_member(proposer) {
            return Err(GovernanceError::NotAMember(proposer));
        }
        payload.check(config).map_err(GovernanceError::MalformedPayload)?;
        let held = ledger.balance(proposer, TokenKind::Lzsp);
        if held < cfg.proposal_fee || held == 0 {
            return Err(GovernanceError::InsufficientLZSP {
                account: proposer,
                held,
                needed: cfg.proposal_fee.max(1),
            });
        }
        if cfg.proposal_fee > 0 {
            ledger.burn(Caller::Governance, proposer, TokenKind::Lzsp, cfg.proposal_fee, "proposal-fee")?;
        }
        let id = ProposalId(self.next_proposal);
        self.next_proposal += 1;
        let closes_at = day + Self::period(level, cfg);
        let mut p = Proposal {
            id,
            proposer,
            level,
            payload,
            state: ProposalState::Created,
            up: 0,
            down: 0,
            voters: BTreeSet::new(),
            created: day,
            closes_at,
            decided: None,
            veto_deadline: None,
            ratified: None,
            quorum: None,
            failure: None,
            history: vec![(day, ProposalState::Created)],
        };
        p.enter(ProposalState::Active, day);
        self.proposals.insert(id, p);
        Ok((
            id,
            vec![
                GovernanceEvent::ProposalCreated {
                    proposal: id,
                    proposer,
                    level,
                    fee: cfg.proposal_fee,
                    closes_at,
                },
                GovernanceEvent::ProposalState {
                    proposal: id,
                    state: ProposalState::Active,
                },
            ],
        ))
    }

    fn get_mut(&mut self, id: ProposalId) -> GovernanceResult<&mut Proposal> {
        self.proposals.get_mut(&id).ok_or(GovernanceError::UnknownProposal(id))
    }

    pub fn delegated_in(&self, account: AccountId) -> Amount {
        self.delegations
            .values()
            .filter(|d| d.delegatee == account)
            .map(|d| d.amount)
            .sum()
    }

    /// Own holdings plus delegations received, capped. Delegators have no
    /// weight of their own, and received weight is not passed on.
    pub fn vote_weight(&self, ledger: &Ledger, account: AccountId, cfg: &GovernanceConfig) -> Amount {
        if self.delegations.contains_key(&account) {
            return 0;
        }
        (ledger.lzsp_holdings(account) + self.delegated_in(account)).min(cfg.vote_cap)
    }

    pub fn vote(
        &mut self,
        ledger: &Ledger,
        cfg: &GovernanceConfig,
        voter: AccountId,
        id: ProposalId,
        direction: Direction,
        day: Day,
    ) -> GovernanceResult<Vec<GovernanceEvent>> {
        let is_member = self.is_member(voter);
        let delegating = self.delegations.contains_key(&voter);
        let weight = self.vote_weight(ledger, voter, cfg);
        let p = self.get_mut(id)?;
        if p.state != ProposalState::Active || day >= p.closes_at {
            return Err(GovernanceError::NotActive(id));
        }
        if !is_member {
            return Err(GovernanceError::NotAMember(voter));
        }
        if delegating {
            return Err(GovernanceError::DelegationActive(voter));
        }
        if !p.voters.insert(voter) {
            return Err(GovernanceError::AlreadyVoted { voter, proposal: id });
        }
        match direction {
            Direction::Up => p.up += weight,
            Direction::Down => p.down += weight,
        }
        Ok(vec![GovernanceEvent::Voted {
            proposal: id,
            voter,
            direction,
            weight,
        }])
    }

    pub fn quorum_weight(ledger: &Ledger, cfg: &GovernanceConfig) -> Amount {
        match cfg.quorum {
            QuorumRule::FractionOfSupply(ppm) => apply_ppm(ledger.circulating(TokenKind::Lzsp), ppm),
            QuorumRule::Absolute(a) => a,
        }
    }

    /// Approved iff up strictly exceeds down and reaches the quorum.
    pub fn finalize(
        &mut self,
        ledger: &Ledger,
        cfg: &GovernanceConfig,
        id: ProposalId,
        day: Day,
    ) -> GovernanceResult<Vec<GovernanceEvent>> {
        let quorum = Self::quorum_weight(ledger, cfg);
        let p = self.get_mut(id)?;
        if p.state != ProposalState::Active {
            return Err(GovernanceError::NotActive(id));
        }
        if day < p.closes_at {
            return Err(GovernanceError::StillActive {
                proposal: id,
                closes_at: p.closes_at,
            });
        }
        let approved = p.up > p.down && p.up >= quorum;
        p.quorum = Some(quorum);
        p.decided = Some(day);
        let state = if approved {
            p.veto_deadline = Some(day + cfg.veto_window);
            ProposalState::Approved
        } else {
            ProposalState::Rejected
        };
        p.enter(state, day);
        let proposer = p.proposer;
        let (up, down) = (p.up, p.down);
        if approved {
            self.accepted.insert(proposer);
        }
        Ok(vec![
            GovernanceEvent::Finalized {
                proposal: id,
                up,
                down,
                quorum,
                approved,
            },
            GovernanceEvent::ProposalState { proposal: id, state },
        ])
    }

    pub fn committee_decide(
        &mut self,
        ledger: &mut Ledger,
        cfg: &GovernanceConfig,
        subject: CommitteeSubject,
        signatures: &[(AccountId, Signature)],
        day: Day,
    ) -> GovernanceResult<Vec<GovernanceEvent>> {
        let committee = self.committee.as_ref().ok_or(GovernanceError::CommitteeSize)?;
        let mut seen = BTreeSet::new();
        for (member, _) in signatures {
            if !committee.members.contains(member) {
                return Err(GovernanceError::NotCommitteeMember(*member));
            }
            if !seen.insert(*member) {
                return Err(GovernanceError::DuplicateSignature(*member));
            }
        }
        let id = subject.proposal();
        let p = self.proposals.get(&id).ok_or(GovernanceError::UnknownProposal(id))?;
        let applicable = match subject {
            CommitteeSubject::Ratify(_) => {
                p.level == ProposalLevel::High && p.state == ProposalState::Approved && p.ratified.is_none()
            }
            CommitteeSubject::Veto(_) => p.state == ProposalState::Approved,
            CommitteeSubject::Miscategorization(_) => p.state == ProposalState::Active,
        };
        if !applicable {
            return Err(GovernanceError::SubjectNotApplicable(id));
        }
        if let (CommitteeSubject::Veto(_), Some(until)) = (subject, p.veto_deadline) {
            if day > until {
                return Err(GovernanceError::VetoWindowClosed { proposal: id, until });
            }
        }
        let cast = signatures.iter().filter(|(_, s)| *s != Signature::Absent).count();
        let yes = signatures.iter().filter(|(_, s)| *s == Signature::Yes).count();
        let approved = committee_approves(cast, yes, cfg);
        let mut events = vec![GovernanceEvent::CommitteeDecision {
            subject,
            cast,
            yes,
            approved,
        }];
        match subject {
            CommitteeSubject::Ratify(_) => {
                let p = self.get_mut(id)?;
                p.ratified = Some(approved);
                if !approved {
                    p.enter(ProposalState::Rejected, day);
                    events.push(GovernanceEvent::ProposalState {
                        proposal: id,
                        state: ProposalState::Rejected,
                    });
                }
            }
            CommitteeSubject::Veto(_) if approved => {
                self.get_mut(id)?.enter(ProposalState::Vetoed, day);
                events.push(GovernanceEvent::ProposalState {
                    proposal: id,
                    state: ProposalState::Vetoed,
                });
            }
            CommitteeSubject::Miscategorization(_) if approved => {
                events.extend(self.penalize_miscategorization(ledger, cfg, id, day)?);
            }
            _ => {}
        }
        Ok(events)
    }

    /// The proposal is moved to the other level; the proposer loses a share
    /// of the fee on a first offense and is blacklisted on repeats.
    fn penalize_miscategorization(
        &mut self,
        ledger: &mut Ledger,
        cfg: &GovernanceConfig,
        id: ProposalId,
        day: Day,
    ) -> GovernanceResult<Vec<GovernanceEvent>> {
        let p = self.get_mut(id)?;
        p.level = match p.level {
            ProposalLevel::LowMedium => ProposalLevel::High,
            ProposalLevel::High => ProposalLevel::LowMedium,
        };
        p.closes_at = p.created + Self::period(p.level, cfg);
        let proposer = p.proposer;
        let offense = {
            let n = self.offenses.entry(proposer).or_insert(0);
            *n += 1;
            *n
        };
        let mut burned = 0;
        let mut blacklisted_until = None;
        let mut permanent = false;
        if offense == 1 {
            let due = apply_ppm(cfg.proposal_fee, cfg.miscategorization_fee_ppm);
            burned = due.min(ledger.balance(proposer, TokenKind::Lzsp));
            if burned > 0 {
                ledger.burn(Caller::Governance, proposer, TokenKind::Lzsp, burned, "miscategorization")?;
            }
        } else {
            let tiers = &cfg.blacklist_days;
            let tier = tiers
                .get((offense - 2) as usize)
                .or(tiers.last())
                .copied()
                .flatten();
            match tier {
                Some(days) => {
                    blacklisted_until = Some(day + days);
                    self.blacklist.insert(proposer, Some(day + days));
                }
                None => {
                    permanent = true;
                    self.blacklist.insert(proposer, None);
                }
            }
        }
        Ok(vec![GovernanceEvent::MiscategorizationPenalty {
            proposer,
            offense,
            burned,
            blacklisted_until,
            permanent,
        }])
    }

    /// Anyone may queue an approved proposal once the veto window has
    /// passed; high-level proposals also need committee ratification.
    pub fn queue(&mut self, id: ProposalId, day: Day) -> GovernanceResult<Vec<GovernanceEvent>> {
        let p = self.get_mut(id)?;
        match p.state {
            ProposalState::Approved => {}
            ProposalState::Vetoed => return Err(GovernanceError::Vetoed(id)),
            _ => return Err(GovernanceError::NotApproved(id)),
        }
        if p.level == ProposalLevel::High && p.ratified != Some(true) {
            return Err(GovernanceError::NotApproved(id));
        }
        let until = p.veto_deadline.unwrap_or(day);
        if day <= until {
            return Err(GovernanceError::VetoWindowOpen { proposal: id, until });
        }
        p.enter(ProposalState::Queued, day);
        Ok(vec![GovernanceEvent::ProposalState {
            proposal: id,
            state: ProposalState::Queued,
        }])
    }

    /// Returns the patched configuration when execution succeeds.
    pub fn execute(
        &mut self,
        config: &EngineConfig,
        id: ProposalId,
        day: Day,
    ) -> GovernanceResult<(Option<EngineConfig>, Vec<GovernanceEvent>)> {
        let p = self.get_mut(id)?;
        match p.state {
            ProposalState::Queued => {}
            ProposalState::Vetoed => return Err(GovernanceError::Vetoed(id)),
            _ => return Err(GovernanceError::NotQueued(id)),
        }
        match apply_patch(config, &p.payload) {
            Ok(next) => {
                p.enter(ProposalState::Executed, day);
                Ok((
                    Some(next),
                    vec![
                        GovernanceEvent::Executed {
                            proposal: id,
                            targets: p.payload.targets.clone(),
                        },
                        GovernanceEvent::ProposalState {
                            proposal: id,
                            state: ProposalState::Executed,
                        },
                    ],
                ))
            }
            Err(reason) => {
                p.failure = Some(reason.clone());
                p.enter(ProposalState::Failed, day);
                Ok((
                    None,
                    vec![
                        GovernanceEvent::ExecutionFailed { proposal: id, reason },
                        GovernanceEvent::ProposalState {
                            proposal: id,
                            state: ProposalState::Failed,
                        },
                    ],
                ))
            }
        }
    }

    pub fn delegate(
        &mut self,
        ledger: &mut Ledger,
        reputation: &ReputationBook,
        cfg: &GovernanceConfig,
        delegator: AccountId,
        delegatee: AccountId,
        day: Day,
    ) -> GovernanceResult<Vec<GovernanceEvent>> {
        if delegator == delegatee {
            return Err(GovernanceError::SelfDelegation);
        }
        for who in [delegator, delegatee] {
            if !self.is_member(who) {
                return Err(GovernanceError::NotAMember(who));
            }
        }
        if reputation.score(delegatee).unwrap_or(0) < cfg.membership_reputation {
            return Err(GovernanceError::LowReputationDelegatee(delegatee));
        }
        let mut events = Vec::new();
        if self.delegations.contains_key(&delegator) {
            events.extend(self.drop_delegation(ledger, delegator)?);
        }
        let amount = ledger.governance_lock_all(delegator)?;
        self.delegations.insert(
            delegator,
            Delegation {
                delegator,
                delegatee,
                amount,
                since: day,
            },
        );
        self.layers.insert(delegator, GovernanceLayer::Delegate);
        events.push(GovernanceEvent::Delegated {
            delegator,
            delegatee,
            amount,
        });
        Ok(events)
    }

    fn drop_delegation(&mut self, ledger: &mut Ledger, delegator: AccountId) -> GovernanceResult<Vec<GovernanceEvent>> {
        let d = self
            .delegations
            .remove(&delegator)
            .ok_or(GovernanceError::NoDelegation(delegator))?;
        let amount = ledger.governance_unlock_all(delegator)?;
        debug_assert_eq!(amount, d.amount);
        Ok(vec![GovernanceEvent::Undelegated { delegator, amount }])
    }

    pub fn undelegate(&mut self, ledger: &mut Ledger, delegator: AccountId) -> GovernanceResult<Vec<GovernanceEvent>> {
        let events = self.drop_delegation(ledger, delegator)?;
        if self.is_member(delegator) {
            self.layers.insert(delegator, GovernanceLayer::Member);
        }
        Ok(events)
    }

    /// Checks the forward-only lifecycle of one proposal's history.
    pub fn lifecycle_violation(p: &Proposal) -> Option<String> {
        let states: Vec<ProposalState> = p.history.iter().map(|(_, s)| *s).collect();
        let pos = |s| states.iter().position(|x| *x == s);
        if let Some(e) = pos(ProposalState::Executed) {
            match pos(ProposalState::Queued) {
                Some(q) if q < e => {}
                _ => return Some(format!("proposal {} executed without being queued", p.id)),
            }
        }
        if let Some(q) = pos(ProposalState::Queued) {
            match pos(ProposalState::Approved) {
                Some(a) if a < q => {}
                _ => return Some(format!("proposal {} queued without approval", p.id)),
            }
        }
        if let Some(a) = pos(ProposalState::Approved) {
            let day = p.history[a].0;
            if day < p.closes_at {
                return Some(format!("proposal {} approved before its active period ended", p.id));
            }
        }
        for w in p.history.windows(2) {
            if w[1].0 < w[0].0 {
                return Some(format!("proposal {} history goes back in time", p.id));
            }
        }
        None
    }
}

/// Share of `PPM` as a fraction, for display.
pub fn ppm_fraction(ppm: u64) -> f64 {
    ppm as f64 / PPM as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ReputationConfig;
    use crate::ledger::AccountRole;
    use crate::types::tokens;

    struct Dao {
        ledger: Ledger,
        rep: ReputationBook,
        book: GovernanceBook,
        config: EngineConfig,
        members: Vec<AccountId>,
    }

    fn dao(n: usize, lzsp: u64) -> Dao {
        let mut ledger = Ledger::new();
        let mut rep = ReputationBook::new();
        let mut book = GovernanceBook::new();
        let config = EngineConfig::default();
        let members: Vec<AccountId> = (0..n)
            .map(|i| {
                let a = ledger.create_account(AccountRole::Neutral, format!("m{i}"));
                ledger.genesis(a, TokenKind::Lzsp, tokens(lzsp)).unwrap();
                rep.init(a, &ReputationConfig::default()).unwrap();
                book.record_founder(a);
                a
            })
            .collect();
        book.refresh_membership(&mut ledger, &rep, &config.governance).unwrap();
        Dao {
            ledger,
            rep,
            book,
            config,
            members,
        }
    }

    fn payload() -> ProposalPayload {
        ProposalPayload::set("deadlines.a", serde_json::json!(5), "shorter validation window")
    }

    #[test]
    fn periods_follow_level() {
        let mut d = dao(2, 500);
        let (lo, _) = d
            .book
            .submit_proposal(&mut d.ledger, &d.config, d.members[0], ProposalLevel::LowMedium, payload(), 10)
            .unwrap();
        let (hi, _) = d
            .book
            .submit_proposal(&mut d.ledger, &d.config, d.members[0], ProposalLevel::High, payload(), 10)
            .unwrap();
        assert_eq!(d.book.proposal(lo).unwrap().closes_at, 17);
        assert_eq!(d.book.proposal(hi).unwrap().closes_at, 40);
        assert_eq!(d.ledger.balance(d.members[0], TokenKind::Lzsp), tokens(480));
    }

    #[test]
    fn malformed_and_poor_proposers_rejected() {
        let mut d = dao(1, 5);
        let mut p = payload();
        p.values.clear();
        assert!(matches!(
            d.book.submit_proposal(&mut d.ledger, &d.config, d.members[0], ProposalLevel::LowMedium, p, 0),
            Err(GovernanceError::MalformedPayload(_))
        ));
        assert!(matches!(
            d.book.submit_proposal(&mut d.ledger, &d.config, d.members[0], ProposalLevel::LowMedium, payload(), 0),
            Err(GovernanceError::InsufficientLZSP { .. })
        ));
        let bad = ProposalPayload::set("deadlines.zz", serde_json::json!(1), "x");
        assert!(matches!(
            d.book.submit_proposal(&mut d.ledger, &d.config, d.members[0], ProposalLevel::LowMedium, bad, 0),
            Err(GovernanceError::MalformedPayload(_))
        ));
    }

    #[test]
    fn weight_is_capped() {
        let d = dao(1, 10_000);
        assert_eq!(d.book.vote_weight(&d.ledger, d.members[0], &d.config.governance), tokens(1_000));
    }

    #[test]
    fn finalize_threshold_arithmetic() {
        // Absolute quorum of 2,000 with up 3,000 vs down 1,000.
        let mut d = dao(6, 1_000);
        d.config.governance.quorum = QuorumRule::Absolute(tokens(2_000));
        let cfg = d.config.governance.clone();
        let (id, _) = d
            .book
            .submit_proposal(&mut d.ledger, &d.config, d.members[0], ProposalLevel::LowMedium, payload(), 0)
            .unwrap();
        for (i, m) in d.members.clone().into_iter().enumerate().skip(1) {
            let dir = if i <= 3 { Direction::Up } else { Direction::Down };
            d.book.vote(&d.ledger, &cfg, m, id, dir, 1).unwrap();
        }
        let p = d.book.proposal(id).unwrap();
        assert_eq!((p.up, p.down), (tokens(3_000), tokens(2_000)));
        assert!(matches!(
            d.book.finalize(&d.ledger, &cfg, id, 6),
            Err(GovernanceError::StillActive { .. })
        ));
        d.book.finalize(&d.ledger, &cfg, id, 7).unwrap();
        assert_eq!(d.book.proposal(id).unwrap().state, ProposalState::Approved);
    }

    #[test]
    fn tie_rejected_and_double_vote() {
        let mut d = dao(3, 1_000);
        let cfg = d.config.governance.clone();
        let (id, _) = d
            .book
            .submit_proposal(&mut d.ledger, &d.config, d.members[0], ProposalLevel::LowMedium, payload(), 0)
            .unwrap();
        d.book.vote(&d.ledger, &cfg, d.members[1], id, Direction::Up, 0).unwrap();
        assert_eq!(
            d.book.vote(&d.ledger, &cfg, d.members[1], id, Direction::Up, 0),
            Err(GovernanceError::AlreadyVoted { voter: d.members[1], proposal: id })
        );
        d.book.vote(&d.ledger, &cfg, d.members[2], id, Direction::Down, 0).unwrap();
        d.book.finalize(&d.ledger, &cfg, id, 7).unwrap();
        assert_eq!(d.book.proposal(id).unwrap().state, ProposalState::Rejected);
        assert_eq!(d.book.queue(id, 20), Err(GovernanceError::NotApproved(id)));
    }

    #[test]
    fn basic_user_cannot_vote() {
        let mut d = dao(1, 1_000);
        let outsider = d.ledger.create_account(AccountRole::Buyer, "x");
        d.ledger.genesis(outsider, TokenKind::Lzsp, tokens(500)).unwrap();
        let cfg = d.config.governance.clone();
        let (id, _) = d
            .book
            .submit_proposal(&mut d.ledger, &d.config, outsider, ProposalLevel::LowMedium, payload(), 0)
            .unwrap();
        assert_eq!(
            d.book.vote(&d.ledger, &cfg, outsider, id, Direction::Up, 0),
            Err(GovernanceError::NotAMember(outsider))
        );
    }

    #[test]
    fn committee_rule_exhaustive() {
        let cfg = GovernanceConfig::default();
        for code in 0..243u32 {
            let mut c = code;
            let (mut cast, mut yes) = (0, 0);
            for _ in 0..5 {
                match c % 3 {
                    0 => {
                        cast += 1;
                        yes += 1
                    }
                    1 => cast += 1,
                    _ => {}
                }
                c /= 3;
            }
            let oracle = cast >= 4 && 2 * yes >= cast;
            assert_eq!(committee_approves(cast, yes, &cfg), oracle, "cast {cast} yes {yes}");
        }
        let strict = GovernanceConfig {
            committee_agreement_inclusive: false,
            ..cfg
        };
        assert!(!committee_approves(4, 2, &strict));
    }

    fn approved_proposal(d: &mut Dao, level: ProposalLevel, payload: ProposalPayload) -> ProposalId {
        let cfg = d.config.governance.clone();
        let (id, _) = d
            .book
            .submit_proposal(&mut d.ledger, &d.config, d.members[0], level, payload, 0)
            .unwrap();
        for m in d.members.clone() {
            d.book.vote(&d.ledger, &cfg, m, id, Direction::Up, 1).unwrap();
        }
        d.book.finalize(&d.ledger, &cfg, id, 30).unwrap();
        id
    }

    #[test]
    fn queue_execute_mutates_config() {
        let mut d = dao(5, 1_000);
        d.book.set_committee(d.members.clone(), 0, &d.config.governance).unwrap();
        let id = approved_proposal(&mut d, ProposalLevel::LowMedium, payload());
        assert!(matches!(d.book.queue(id, 33), Err(GovernanceError::VetoWindowOpen { .. })));
        d.book.queue(id, 34).unwrap();
        let (next, _) = d.book.execute(&d.config, id, 34).unwrap();
        assert_eq!(next.unwrap().deadlines.a, 5);
        assert!(GovernanceBook::lifecycle_violation(d.book.proposal(id).unwrap()).is_none());
    }

    #[test]
    fn veto_blocks_execution() {
        let mut d = dao(5, 1_000);
        d.book.set_committee(d.members.clone(), 0, &d.config.governance).unwrap();
        let id = approved_proposal(&mut d, ProposalLevel::LowMedium, payload());
        let sigs: Vec<_> = d.members.iter().map(|m| (*m, Signature::Yes)).collect();
        d.book
            .committee_decide(&mut d.ledger, &d.config.governance, CommitteeSubject::Veto(id), &sigs, 31)
            .unwrap();
        assert_eq!(d.book.execute(&d.config, id, 40).unwrap_err(), GovernanceError::Vetoed(id));
        assert_eq!(d.book.queue(id, 40), Err(GovernanceError::Vetoed(id)));
    }

    #[test]
    fn invalid_patch_fails_execution() {
        let mut d = dao(5, 1_000);
        let bad = ProposalPayload::set("deadlines.b_prime", serde_json::json!(50), "break the constraint");
        let id = approved_proposal(&mut d, ProposalLevel::LowMedium, bad);
        d.book.queue(id, 40).unwrap();
        let (next, _) = d.book.execute(&d.config, id, 40).unwrap();
        assert!(next.is_none());
        assert_eq!(d.book.proposal(id).unwrap().state, ProposalState::Failed);
    }

    #[test]
    fn high_level_needs_ratification() {
        let mut d = dao(5, 1_000);
        d.book.set_committee(d.members.clone(), 0, &d.config.governance).unwrap();
        let id = approved_proposal(&mut d, ProposalLevel::High, payload());
        assert_eq!(d.book.queue(id, 40), Err(GovernanceError::NotApproved(id)));
        let sigs = [(d.members[0], Signature::Yes), (d.members[1], Signature::Yes), (d.members[2], Signature::No), (d.members[3], Signature::Yes)];
        d.book
            .committee_decide(&mut d.ledger, &d.config.governance, CommitteeSubject::Ratify(id), &sigs, 31)
            .unwrap();
        d.book.queue(id, 40).unwrap();
        let dup = [(d.members[0], Signature::Yes), (d.members[0], Signature::Yes)];
        assert_eq!(
            d.book.committee_decide(&mut d.ledger, &d.config.governance, CommitteeSubject::Veto(id), &dup, 31),
            Err(GovernanceError::DuplicateSignature(d.members[0]))
        );
    }

    #[test]
    fn delegation_no_recursion() {
        let mut d = dao(3, 300);
        let cfg = d.config.governance.clone();
        let (a, b, c) = (d.members[0], d.members[1], d.members[2]);
        assert_eq!(
            d.book.delegate(&mut d.ledger, &d.rep, &cfg, a, a, 0),
            Err(GovernanceError::SelfDelegation)
        );
        d.book.delegate(&mut d.ledger, &d.rep, &cfg, a, b, 0).unwrap();
        assert_eq!(d.book.vote_weight(&d.ledger, b, &cfg), tokens(600));
        d.book.delegate(&mut d.ledger, &d.rep, &cfg, b, c, 0).unwrap();
        // c receives b's own tokens only; a's weight does not flow on.
        assert_eq!(d.book.vote_weight(&d.ledger, c, &cfg), tokens(600));
        assert_eq!(d.book.vote_weight(&d.ledger, b, &cfg), 0);
        assert_eq!(d.book.layer(a), GovernanceLayer::Delegate);
        assert!(d.ledger.conservation_report().holds());
    }

    #[test]
    fn demotion_on_reputation_loss() {
        let mut d = dao(2, 300);
        let cfg = d.config.governance.clone();
        d.rep
            .penalize(Caller::Arbitration, d.members[1], crate::reputation::ReputationReason::Arbitration, 20, 0, None)
            .unwrap();
        let ev = d.book.refresh_membership(&mut d.ledger, &d.rep, &cfg).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(d.book.layer(d.members[1]), GovernanceLayer::Basic);
        assert_eq!(
            d.book.delegate(&mut d.ledger, &d.rep, &cfg, d.members[0], d.members[1], 0),
            Err(GovernanceError::NotAMember(d.members[1]))
        );
    }

    #[test]
    fn miscategorization_escalates() {
        let mut d = dao(5, 1_000);
        d.book.set_committee(d.members.clone(), 0, &d.config.governance).unwrap();
        let sigs: Vec<_> = d.members.iter().map(|m| (*m, Signature::Yes)).collect();
        let mut last = Vec::new();
        for day in [0, 1, 20] {
            let (id, _) = d
                .book
                .submit_proposal(&mut d.ledger, &d.config, d.members[0], ProposalLevel::LowMedium, payload(), day)
                .unwrap();
            last = d
                .book
                .committee_decide(&mut d.ledger, &d.config.governance, CommitteeSubject::Miscategorization(id), &sigs, day)
                .unwrap();
            if day == 0 {
                assert_eq!(d.book.proposal(id).unwrap().closes_at, 30);
            }
        }
        assert!(matches!(
            last.last(),
            Some(GovernanceEvent::MiscategorizationPenalty { offense: 3, blacklisted_until: Some(50), .. })
        ));
        assert_eq!(
            d.book
                .submit_proposal(&mut d.ledger, &d.config, d.members[0], ProposalLevel::LowMedium, payload(), 50)
                .unwrap_err(),
            GovernanceError::Blacklisted(d.members[0])
        );
    }
}
