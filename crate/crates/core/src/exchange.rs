//! Buyer/seller exchange sessions: listings, the session state machine,
//! deadline enforcement, QR confirmation, cancellation and returns.
//!
//! Money moves through the [`Ledger`]; reputation penalties that the protocol
//! attaches to exchange steps go through the [`ReputationBook`]. Rewards and
//! dispute routing are left to the caller, which inspects the returned
//! [`ExchangeEvent`]s.

use std::collections::BTreeMap;
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::ledger::{usd_cents, Disposition, Ledger, LedgerError, TokenKind};
use crate::reputation::{ReputationBook, ReputationReason};
use crate::types::{AccountId, Amount, Caller, Day, ListingId, SessionId, UsdCents};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExchangeState {
    Listed,
    PurchaseRequested,
    SellerValidated,
    TermsAgreed,
    EscrowFunded,
    #[serde(rename = "QRIssued")]
    QrIssued,
    AwaitingDropoff,
    InTransit,
    TrackingMissing,
    Delivered,
    #[serde(rename = "AwaitingQR")]
    AwaitingQr,
    AwaitingSatisfaction,
    ResolutionWindow,
    ReturnPending,
    Settled,
    Cancelled,
    Disputed,
}

impl ExchangeState {
    pub const ALL: [ExchangeState; 17] = [
        ExchangeState::Listed,
        ExchangeState::PurchaseRequested,
        ExchangeState::SellerValidated,
        ExchangeState::TermsAgreed,
        ExchangeState::EscrowFunded,
        ExchangeState::QrIssued,
        ExchangeState::AwaitingDropoff,
        ExchangeState::InTransit,
        ExchangeState::TrackingMissing,
        ExchangeState::Delivered,
        ExchangeState::AwaitingQr,
        ExchangeState::AwaitingSatisfaction,
        ExchangeState::ResolutionWindow,
        ExchangeState::ReturnPending,
        ExchangeState::Settled,
        ExchangeState::Cancelled,
        ExchangeState::Disputed,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, ExchangeState::Settled | ExchangeState::Cancelled)
    }

    /// States in which the buyer's payment sits in escrow.
    pub fn holds_escrow(self) -> bool {
        !matches!(
            self,
            ExchangeState::Listed
                | ExchangeState::PurchaseRequested
                | ExchangeState::SellerValidated
                | ExchangeState::TermsAgreed
                | ExchangeState::Settled
                | ExchangeState::Cancelled
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ExchangeState::Listed => "Listed",
            ExchangeState::PurchaseRequested => "PurchaseRequested",
            ExchangeState::SellerValidated => "SellerValidated",
            ExchangeState::TermsAgreed => "TermsAgreed",
            ExchangeState::EscrowFunded => "EscrowFunded",
            ExchangeState::QrIssued => "QRIssued",
            ExchangeState::AwaitingDropoff => "AwaitingDropoff",
            ExchangeState::InTransit => "InTransit",
            ExchangeState::TrackingMissing => "TrackingMissing",
            ExchangeState::Delivered => "Delivered",
            ExchangeState::AwaitingQr => "AwaitingQR",
            ExchangeState::AwaitingSatisfaction => "AwaitingSatisfaction",
            ExchangeState::ResolutionWindow => "ResolutionWindow",
            ExchangeState::ReturnPending => "ReturnPending",
            ExchangeState::Settled => "Settled",
            ExchangeState::Cancelled => "Cancelled",
            ExchangeState::Disputed => "Disputed",
        }
    }
}

impl fmt::Display for ExchangeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Protocol function that caused a transition. The numbered variants follow
/// the marketplace operating algorithm; the rest are engine plumbing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    #[serde(rename = "1")]
    Sell,
    #[serde(rename = "2,3")]
    Purchase,
    #[serde(rename = "4")]
    Validate,
    #[serde(rename = "5")]
    AgreeTerms,
    #[serde(rename = "6")]
    FundEscrow,
    #[serde(rename = "7,8")]
    PrepareShipment,
    #[serde(rename = "9")]
    Dropoff,
    #[serde(rename = "9'")]
    DropoffNoTracking,
    #[serde(rename = "10")]
    ConfirmOrClaim,
    #[serde(rename = "10'")]
    LateTracking,
    #[serde(rename = "11")]
    QrMissing,
    #[serde(rename = "11'")]
    QrAnswer,
    #[serde(rename = "12")]
    Scan,
    #[serde(rename = "13")]
    SatisfactionSilence,
    #[serde(rename = "14")]
    Satisfaction,
    #[serde(rename = "15")]
    Resolution,
    C1,
    C2,
    C3,
    C4,
    C5,
    #[serde(rename = "delivery")]
    Delivery,
    #[serde(rename = "return-timeout")]
    ReturnTimeout,
    #[serde(rename = "ruling")]
    Ruling,
}

impl Rule {
    /// Every numbered, branch and cancellation function of the algorithm.
    pub const PROTOCOL: [Rule; 21] = [
        Rule::Sell,
        Rule::Purchase,
        Rule::Validate,
        Rule::AgreeTerms,
        Rule::FundEscrow,
        Rule::PrepareShipment,
        Rule::Dropoff,
        Rule::DropoffNoTracking,
        Rule::ConfirmOrClaim,
        Rule::LateTracking,
        Rule::QrMissing,
        Rule::QrAnswer,
        Rule::Scan,
        Rule::SatisfactionSilence,
        Rule::Satisfaction,
        Rule::Resolution,
        Rule::C1,
        Rule::C2,
        Rule::C3,
        Rule::C4,
        Rule::C5,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Rule::Sell => "1",
            Rule::Purchase => "2,3",
            Rule::Validate => "4",
            Rule::AgreeTerms => "5",
            Rule::FundEscrow => "6",
            Rule::PrepareShipment => "7,8",
            Rule::Dropoff => "9",
            Rule::DropoffNoTracking => "9'",
            Rule::ConfirmOrClaim => "10",
            Rule::LateTracking => "10'",
            Rule::QrMissing => "11",
            Rule::QrAnswer => "11'",
            Rule::Scan => "12",
            Rule::SatisfactionSilence => "13",
            Rule::Satisfaction => "14",
            Rule::Resolution => "15",
            Rule::C1 => "C1",
            Rule::C2 => "C2",
            Rule::C3 => "C3",
            Rule::C4 => "C4",
            Rule::C5 => "C5",
            Rule::Delivery => "delivery",
            Rule::ReturnTimeout => "return-timeout",
            Rule::Ruling => "ruling",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Who triggered a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Actor {
    Buyer,
    Seller,
    Carrier,
    Clock,
    Arbitration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trigger {
    Action,
    Timeout,
}

use ExchangeState as S;

/// Legal session edges as (from, to, rule, trigger). `Listed -> PurchaseRequested`
/// is the session's birth edge.
pub const TRANSITIONS: &[(ExchangeState, ExchangeState, Rule, Trigger)] = &[
    (S::Listed, S::PurchaseRequested, Rule::Purchase, Trigger::Action),
    (S::PurchaseRequested, S::SellerValidated, Rule::Validate, Trigger::Action),
    (S::PurchaseRequested, S::Cancelled, Rule::C1, Trigger::Action),
    (S::PurchaseRequested, S::Cancelled, Rule::C1, Trigger::Timeout),
    (S::SellerValidated, S::TermsAgreed, Rule::AgreeTerms, Trigger::Action),
    (S::SellerValidated, S::Cancelled, Rule::C1, Trigger::Action),
    (S::SellerValidated, S::Cancelled, Rule::C1, Trigger::Timeout),
    (S::TermsAgreed, S::EscrowFunded, Rule::FundEscrow, Trigger::Action),
    (S::TermsAgreed, S::Cancelled, Rule::C1, Trigger::Action),
    (S::TermsAgreed, S::Cancelled, Rule::C1, Trigger::Timeout),
    (S::EscrowFunded, S::QrIssued, Rule::PrepareShipment, Trigger::Action),
    (S::EscrowFunded, S::Cancelled, Rule::C2, Trigger::Action),
    (S::EscrowFunded, S::Cancelled, Rule::PrepareShipment, Trigger::Timeout),
    (S::QrIssued, S::AwaitingDropoff, Rule::PrepareShipment, Trigger::Action),
    (S::QrIssued, S::InTransit, Rule::Dropoff, Trigger::Action),
    (S::QrIssued, S::TrackingMissing, Rule::DropoffNoTracking, Trigger::Action),
    (S::QrIssued, S::Disputed, Rule::DropoffNoTracking, Trigger::Action),
    (S::QrIssued, S::Cancelled, Rule::C2, Trigger::Action),
    (S::QrIssued, S::Cancelled, Rule::PrepareShipment, Trigger::Timeout),
    (S::AwaitingDropoff, S::InTransit, Rule::Dropoff, Trigger::Action),
    (S::AwaitingDropoff, S::TrackingMissing, Rule::DropoffNoTracking, Trigger::Action),
    (S::AwaitingDropoff, S::Disputed, Rule::DropoffNoTracking, Trigger::Action),
    (S::AwaitingDropoff, S::Cancelled, Rule::C2, Trigger::Action),
    (S::AwaitingDropoff, S::Cancelled, Rule::PrepareShipment, Trigger::Timeout),
    (S::TrackingMissing, S::InTransit, Rule::LateTracking, Trigger::Action),
    (S::TrackingMissing, S::Disputed, Rule::LateTracking, Trigger::Action),
    (S::TrackingMissing, S::Disputed, Rule::LateTracking, Trigger::Timeout),
    (S::TrackingMissing, S::ReturnPending, Rule::C3, Trigger::Action),
    (S::InTransit, S::Delivered, Rule::Delivery, Trigger::Action),
    (S::InTransit, S::Disputed, Rule::ConfirmOrClaim, Trigger::Action),
    (S::InTransit, S::Settled, Rule::ConfirmOrClaim, Trigger::Timeout),
    (S::InTransit, S::ReturnPending, Rule::C3, Trigger::Action),
    (S::Delivered, S::AwaitingSatisfaction, Rule::Scan, Trigger::Action),
    (S::Delivered, S::AwaitingSatisfaction, Rule::ConfirmOrClaim, Trigger::Action),
    (S::Delivered, S::AwaitingQr, Rule::QrMissing, Trigger::Action),
    (S::Delivered, S::Disputed, Rule::ConfirmOrClaim, Trigger::Action),
    (S::Delivered, S::Settled, Rule::ConfirmOrClaim, Trigger::Timeout),
    (S::Delivered, S::ReturnPending, Rule::C4, Trigger::Action),
    (S::AwaitingQr, S::Delivered, Rule::QrAnswer, Trigger::Action),
    (S::AwaitingQr, S::Delivered, Rule::QrAnswer, Trigger::Timeout),
    (S::AwaitingQr, S::AwaitingSatisfaction, Rule::ConfirmOrClaim, Trigger::Action),
    (S::AwaitingQr, S::Disputed, Rule::ConfirmOrClaim, Trigger::Action),
    (S::AwaitingQr, S::ReturnPending, Rule::C4, Trigger::Action),
    (S::AwaitingSatisfaction, S::Settled, Rule::Satisfaction, Trigger::Action),
    (S::AwaitingSatisfaction, S::ResolutionWindow, Rule::Satisfaction, Trigger::Action),
    (S::AwaitingSatisfaction, S::Settled, Rule::SatisfactionSilence, Trigger::Timeout),
    (S::AwaitingSatisfaction, S::ReturnPending, Rule::C4, Trigger::Action),
    (S::ResolutionWindow, S::Settled, Rule::Resolution, Trigger::Action),
    (S::ResolutionWindow, S::Disputed, Rule::Resolution, Trigger::Action),
    (S::ResolutionWindow, S::Disputed, Rule::Resolution, Trigger::Timeout),
    (S::ResolutionWindow, S::ReturnPending, Rule::C4, Trigger::Action),
    (S::ReturnPending, S::Cancelled, Rule::C3, Trigger::Action),
    (S::ReturnPending, S::Cancelled, Rule::C4, Trigger::Action),
    (S::ReturnPending, S::Disputed, Rule::ReturnTimeout, Trigger::Timeout),
    (S::Disputed, S::Settled, Rule::Ruling, Trigger::Action),
    (S::Disputed, S::Cancelled, Rule::Ruling, Trigger::Action),
];

pub fn is_legal(from: ExchangeState, to: ExchangeState, rule: Rule) -> bool {
    TRANSITIONS
        .iter()
        .any(|&(f, t, r, _)| f == from && t == to && r == rule)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ListingStatus {
    Active,
    InExchange,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Listing {
    pub id: ListingId,
    pub seller: AccountId,
    pub description: String,
    pub price: Amount,
    pub token: TokenKind,
    pub category: String,
    pub status: ListingStatus,
    pub listed_on: Day,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "number")]
pub enum Tracking {
    None,
    Informed(String),
    DeclaredLost,
}

/// How the seller reports tracking at drop-off.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "number")]
pub enum DropoffTracking {
    Informed(String),
    DeclaredLost,
    Silent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrNonce {
    /// 128-bit value, lowercase hex.
    pub value: String,
    pub issued_at: Day,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "nonce")]
pub enum ReceiptVia {
    Scan(String),
    Manual,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchors {
    pub t0: Option<Day>,
    pub t1: Option<Day>,
    pub t1_prime: Option<Day>,
    pub t2: Option<Day>,
    pub t3: Option<Day>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ruling {
    ForClaimant,
    ForRespondent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OutcomeKind {
    SuccessConfirmed,
    SuccessByDefault,
    Cancelled { stage: Rule },
    ResolvedMutually,
    Arbitrated { ruling: Ruling },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    #[serde(flatten)]
    pub kind: OutcomeKind,
    pub satisfaction: Option<bool>,
}

impl Outcome {
    /// Escrow disposition this outcome implies, given the claimant is the buyer.
    pub fn expected_disposition(&self) -> Disposition {
        match self.kind {
            OutcomeKind::SuccessConfirmed
            | OutcomeKind::SuccessByDefault
            | OutcomeKind::ResolvedMutually => Disposition::ToSeller,
            OutcomeKind::Cancelled { .. } => Disposition::ToBuyer,
            OutcomeKind::Arbitrated { ruling: Ruling::ForClaimant } => Disposition::ToBuyer,
            OutcomeKind::Arbitrated { ruling: Ruling::ForRespondent } => Disposition::ToSeller,
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(
            self.kind,
            OutcomeKind::SuccessConfirmed | OutcomeKind::SuccessByDefault | OutcomeKind::ResolvedMutually
        )
    }
}

/// Dispute sources a claim can cite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisputeReason {
    WrongDescription,
    PartyWithdrew,
    PartyUnresponsive,
    NotDelivered,
    WrongItem,
    Defective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisputeSubject {
    /// The locked escrow of a session.
    Escrow,
    /// Unrecovered value of a post-settlement return.
    Clawback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReturnRequest {
    pub stage: Rule,
    pub requested: Day,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub listing: ListingId,
    pub buyer: AccountId,
    pub seller: AccountId,
    pub price: Amount,
    pub token: TokenKind,
    pub value_usd_cents: UsdCents,
    pub state: ExchangeState,
    /// Day the current state was entered.
    pub entered: Day,
    pub anchors: Anchors,
    pub qr: Option<QrNonce>,
    pub qr_included: bool,
    pub qr_supplied_by_market: bool,
    pub scanned_on_time: bool,
    pub receipt_confirmed: bool,
    /// Carrier reported delivery.
    pub delivered: bool,
    pub tracking: Tracking,
    pub outcome: Option<Outcome>,
    pub return_request: Option<ReturnRequest>,
    /// Disputes on this session must stay internal.
    pub force_internal: bool,
    /// State left through the most recent timeout.
    pub timed_out_from: Option<ExchangeState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub session: SessionId,
    pub from: ExchangeState,
    pub to: ExchangeState,
    pub rule: Rule,
    pub actor: Actor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExchangeEvent {
    Listed {
        listing: ListingId,
        seller: AccountId,
        price: Amount,
        token: TokenKind,
        category: String,
        rule: Rule,
    },
    ListingClosed {
        listing: ListingId,
    },
    Transition {
        session: SessionId,
        from: ExchangeState,
        to: ExchangeState,
        rule: Rule,
        actor: Actor,
    },
    SellerNotified {
        session: SessionId,
        seller: AccountId,
    },
    QrIssued {
        session: SessionId,
        nonce: String,
    },
    QrSupplied {
        session: SessionId,
        by_market: bool,
    },
    TermsRecorded {
        session: SessionId,
    },
    ReturnRequested {
        session: SessionId,
        rule: Rule,
    },
    ReturnCompleted {
        session: SessionId,
        rule: Rule,
        refunded: Amount,
        shortfall: Amount,
    },
    Terminal {
        session: SessionId,
        outcome: Outcome,
    },
    /// Caller should open a dispute for the session.
    DisputeRequired {
        session: SessionId,
        reason: DisputeReason,
        subject: DisputeSubject,
        amount: Amount,
        force_internal: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExchangeError {
    #[error("{0} has no active seller stake")]
    SellerNotActivated(AccountId),
    #[error("price worth {value_cents} USD cents is below the {floor_cents} cent floor")]
    BelowMinimumValue { value_cents: UsdCents, floor_cents: UsdCents },
    #[error("category {0:?} is not offered")]
    UnknownCategory(String),
    #[error("{0} cannot be used as a price token")]
    UnsupportedToken(TokenKind),
    #[error("listing {0} is not available")]
    ListingUnavailable(ListingId),
    #[error("buyer and seller are the same account")]
    SelfDealing,
    #[error("{session} is in {state}")]
    WrongState { session: SessionId, state: ExchangeState },
    #[error("deadline for {session} passed on day {deadline}")]
    DeadlineExpired { session: SessionId, deadline: Day },
    #[error("QR nonce does not match")]
    NonceMismatch,
    #[error("cancellation window for {session} closed on day {closed}")]
    CancellationWindowClosed { session: SessionId, closed: Day },
    #[error("{0} may not act on this step")]
    WrongParty(AccountId),
    #[error("unknown listing {0}")]
    UnknownListing(ListingId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("a QR request on day {day} would end after the confirmation deadline {deadline}")]
    QrRequestTooLate { day: Day, deadline: Day },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

pub type ExchangeResult<T> = Result<T, ExchangeError>;

/// Mutable state an exchange step may touch.
pub struct Ctx<'a> {
    pub ledger: &'a mut Ledger,
    pub reputation: &'a mut ReputationBook,
    pub config: &'a EngineConfig,
    pub day: Day,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExchangeBook {
    listings: BTreeMap<ListingId, Listing>,
    sessions: BTreeMap<SessionId, Session>,
    next_listing: u64,
    next_session: u64,
}

impl ExchangeBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn listing(&self, id: ListingId) -> Option<&Listing> {
        self.listings.get(&id)
    }

    pub fn listings(&self) -> impl Iterator<Item = &Listing> {
        self.listings.values()
    }

    pub fn session(&self, id: SessionId) -> Option<&Session> {
        self.sessions.get(&id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    /// Number of sessions the account takes part in that are not terminal.
    pub fn open_sessions_of(&self, account: AccountId) -> usize {
        self.sessions
            .values()
            .filter(|s| !s.state.is_terminal() && (s.buyer == account || s.seller == account))
            .count()
    }

    fn get(&mut self, id: SessionId) -> ExchangeResult<&mut Session> {
        self.sessions
            .get_mut(&id)
            .ok_or(ExchangeError::UnknownSession(id))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn list_item(
        &mut self,
        ctx: &mut Ctx<'_>,
        seller: AccountId,
        description: &str,
        price: Amount,
        token: TokenKind,
        category: &str,
    ) -> ExchangeResult<(ListingId, Vec<ExchangeEvent>)> {
        let account = ctx.ledger.account(seller)?;
        if !account.has_active_stake() {
            return Err(ExchangeError::SellerNotActivated(seller));
        }
        if !token.is_payment_token() {
            return Err(ExchangeError::UnsupportedToken(token));
        }
        let cats = &ctx.config.market.categories;
        if !cats.is_empty() && !cats.iter().any(|c| c == category) {
            return Err(ExchangeError::UnknownCategory(category.to_string()));
        }
        let rate = ctx.config.ledger.rate_at(ctx.day);
        let value_cents = usd_cents(price, token, rate);
        let floor_cents = ctx.config.market.listing_floor_usd_cents;
        if value_cents < floor_cents {
            return Err(ExchangeError::BelowMinimumValue {
                value_cents,
                floor_cents,
            });
        }
        let id = ListingId(self.next_listing);
        self.next_listing += 1;
        self.listings.insert(
            id,
            Listing {
                id,
                seller,
                description: description.to_string(),
                price,
                token,
                category: category.to_string(),
                status: ListingStatus::Active,
                listed_on: ctx.day,
            },
        );
        Ok((
            id,
            vec![ExchangeEvent::Listed {
                listing: id,
                seller,
                price,
                token,
                category: category.to_string(),
                rule: Rule::Sell,
            }],
        ))
    }

    pub fn request_purchase(
        &mut self,
        ctx: &mut Ctx<'_>,
        buyer: AccountId,
        listing_id: ListingId,
    ) -> ExchangeResult<(SessionId, Vec<ExchangeEvent>)> {
        ctx.ledger.account(buyer)?;
        let listing = self
            .listings
            .get_mut(&listing_id)
            .ok_or(ExchangeError::UnknownListing(listing_id))?;
        if listing.status != ListingStatus::Active {
            return Err(ExchangeError::ListingUnavailable(listing_id));
        }
        if listing.seller == buyer {
            return Err(ExchangeError::SelfDealing);
        }
        listing.status = ListingStatus::InExchange;
        let rate = ctx.config.ledger.rate_at(ctx.day);
        let id = SessionId(self.next_session);
        self.next_session += 1;
        let session = Session {
            id,
            listing: listing_id,
            buyer,
            seller: listing.seller,
            price: listing.price,
            token: listing.token,
            value_usd_cents: usd_cents(listing.price, listing.token, rate),
            state: S::Listed,
            entered: ctx.day,
            anchors: Anchors::default(),
            qr: None,
            qr_included: false,
            qr_supplied_by_market: false,
            scanned_on_time: false,
            receipt_confirmed: false,
            delivered: false,
            tracking: Tracking::None,
            outcome: None,
            return_request: None,
            force_internal: false,
            timed_out_from: None,
        };
        let seller = session.seller;
        self.sessions.insert(id, session);
        let mut events = Vec::new();
        self.move_to(id, S::PurchaseRequested, Rule::Purchase, Actor::Buyer, ctx.day, &mut events)?;
        events.push(ExchangeEvent::SellerNotified { session: id, seller });
        Ok((id, events))
    }

    fn move_to(
        &mut self,
        id: SessionId,
        to: ExchangeState,
        rule: Rule,
        actor: Actor,
        day: Day,
        events: &mut Vec<ExchangeEvent>,
    ) -> ExchangeResult<()> {
        let s = self.get(id)?;
        let from = s.state;
        debug_assert!(is_legal(from, to, rule), "illegal edge {from} -> {to} ({rule})");
        s.state = to;
        s.entered = day;
        events.push(ExchangeEvent::Transition {
            session: id,
            from,
            to,
            rule,
            actor,
        });
        Ok(())
    }

    fn finish(
        &mut self,
        id: SessionId,
        outcome: Outcome,
        events: &mut Vec<ExchangeEvent>,
    ) -> ExchangeResult<()> {
        let s = self.get(id)?;
        debug_assert!(s.outcome.is_none());
        s.outcome = Some(outcome);
        let listing = s.listing;
        events.push(ExchangeEvent::Terminal {
            session: id,
            outcome,
        });
        if let Some(l) = self.listings.get_mut(&listing) {
            l.status = ListingStatus::Closed;
            events.push(ExchangeEvent::ListingClosed { listing });
        }
        Ok(())
    }

    /// Checks the acting party, the state and an optional inclusive deadline.
    fn guard(
        &self,
        id: SessionId,
        party: Option<(AccountId, Party)>,
        allowed: &[ExchangeState],
        deadline: impl Fn(&Session) -> Option<Day>,
        day: Day,
    ) -> ExchangeResult<&Session> {
        let s = self
            .sessions
            .get(&id)
            .ok_or(ExchangeError::UnknownSession(id))?;
        if let Some((who, party)) = party {
            let ok = match party {
                Party::Buyer => who == s.buyer,
                Party::Seller => who == s.seller,
                Party::Either => who == s.buyer || who == s.seller,
            };
            if !ok {
                return Err(ExchangeError::WrongParty(who));
            }
        }
        if !allowed.contains(&s.state) {
            if s.timed_out_from.is_some_and(|p| allowed.contains(&p)) {
                if let Some(d) = deadline(s) {
                    return Err(ExchangeError::DeadlineExpired {
                        session: id,
                        deadline: d,
                    });
                }
            }
            return Err(ExchangeError::WrongState {
                session: id,
                state: s.state,
            });
        }
        if let Some(d) = deadline(s) {
            if day > d {
                return Err(ExchangeError::DeadlineExpired {
                    session: id,
                    deadline: d,
                });
            }
        }
        Ok(s)
    }

    /// `accept = false` declines the sale.
    pub fn validate_sale(
        &mut self,
        ctx: &mut Ctx<'_>,
        seller: AccountId,
        id: SessionId,
        accept: bool,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        let pre = ctx.config.deadlines.pre_escrow;
        self.guard(
            id,
            Some((seller, Party::Seller)),
            &[S::PurchaseRequested],
            |s| Some(s.entered + pre),
            ctx.day,
        )?;
        let mut events = Vec::new();
        if accept {
            self.move_to(id, S::SellerValidated, Rule::Validate, Actor::Seller, ctx.day, &mut events)?;
        } else {
            self.move_to(id, S::Cancelled, Rule::C1, Actor::Seller, ctx.day, &mut events)?;
            self.finish(id, cancelled(Rule::C1), &mut events)?;
        }
        Ok(events)
    }

    /// Atomic agreement on shipping terms; either party may record it.
    pub fn agree_terms(
        &mut self,
        ctx: &mut Ctx<'_>,
        party: AccountId,
        id: SessionId,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        let pre = ctx.config.deadlines.pre_escrow;
        let s = self.guard(
            id,
            Some((party, Party::Either)),
            &[S::SellerValidated],
            |s| Some(s.entered + pre),
            ctx.day,
        )?;
        let actor = if party == s.buyer { Actor::Buyer } else { Actor::Seller };
        let mut events = vec![ExchangeEvent::TermsRecorded { session: id }];
        self.move_to(id, S::TermsAgreed, Rule::AgreeTerms, actor, ctx.day, &mut events)?;
        Ok(events)
    }

    pub fn fund_escrow(
        &mut self,
        ctx: &mut Ctx<'_>,
        buyer: AccountId,
        id: SessionId,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        let pre = ctx.config.deadlines.pre_escrow;
        let s = self.guard(
            id,
            Some((buyer, Party::Buyer)),
            &[S::TermsAgreed],
            |s| Some(s.entered + pre),
            ctx.day,
        )?;
        let (price, token) = (s.price, s.token);
        ctx.ledger.lock_escrow(id, buyer, price, token)?;
        self.get(id)?.anchors.t0 = Some(ctx.day);
        let mut events = Vec::new();
        self.move_to(id, S::EscrowFunded, Rule::FundEscrow, Actor::Buyer, ctx.day, &mut events)?;
        Ok(events)
    }

    fn t0_plus_a(cfg: &EngineConfig) -> impl Fn(&Session) -> Option<Day> + '_ {
        move |s| s.anchors.t0.map(|t| t + cfg.deadlines.a)
    }

    fn t1_plus_b(cfg: &EngineConfig) -> impl Fn(&Session) -> Option<Day> + '_ {
        move |s| s.anchors.t1.map(|t| t + cfg.deadlines.b)
    }

    /// Seller asks the marketplace for the package QR code.
    pub fn issue_qr(
        &mut self,
        ctx: &mut Ctx<'_>,
        seller: AccountId,
        id: SessionId,
        rng: &mut impl RngCore,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        self.guard(
            id,
            Some((seller, Party::Seller)),
            &[S::EscrowFunded],
            Self::t0_plus_a(ctx.config),
            ctx.day,
        )?;
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        let value = hex::encode(bytes);
        self.get(id)?.qr = Some(QrNonce {
            value: value.clone(),
            issued_at: ctx.day,
        });
        let mut events = vec![ExchangeEvent::QrIssued {
            session: id,
            nonce: value,
        }];
        self.move_to(id, S::QrIssued, Rule::PrepareShipment, Actor::Seller, ctx.day, &mut events)?;
        Ok(events)
    }

    /// Seller has printed the QR code and packed the item.
    pub fn prepare_package(
        &mut self,
        ctx: &mut Ctx<'_>,
        seller: AccountId,
        id: SessionId,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        self.guard(
            id,
            Some((seller, Party::Seller)),
            &[S::QrIssued],
            Self::t0_plus_a(ctx.config),
            ctx.day,
        )?;
        let mut events = Vec::new();
        self.move_to(id, S::AwaitingDropoff, Rule::PrepareShipment, Actor::Seller, ctx.day, &mut events)?;
        Ok(events)
    }

    pub fn confirm_dropoff(
        &mut self,
        ctx: &mut Ctx<'_>,
        seller: AccountId,
        id: SessionId,
        qr_included: bool,
        tracking: DropoffTracking,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        self.guard(
            id,
            Some((seller, Party::Seller)),
            &[S::QrIssued, S::AwaitingDropoff],
            Self::t0_plus_a(ctx.config),
            ctx.day,
        )?;
        let day = ctx.day;
        let s = self.get(id)?;
        s.qr_included = qr_included;
        s.anchors.t1 = Some(day);
        let mut events = Vec::new();
        match tracking {
            DropoffTracking::Informed(number) => {
                s.tracking = Tracking::Informed(number);
                self.move_to(id, S::InTransit, Rule::Dropoff, Actor::Seller, day, &mut events)?;
            }
            DropoffTracking::Silent => {
                self.move_to(id, S::TrackingMissing, Rule::DropoffNoTracking, Actor::Seller, day, &mut events)?;
            }
            DropoffTracking::DeclaredLost => {
                s.tracking = Tracking::DeclaredLost;
                s.force_internal = true;
                self.move_to(id, S::Disputed, Rule::DropoffNoTracking, Actor::Seller, day, &mut events)?;
                events.push(self.dispute_required(id, DisputeReason::NotDelivered)?);
            }
        }
        Ok(events)
    }

    /// Late tracking report after a silent drop-off.
    pub fn inform_tracking(
        &mut self,
        ctx: &mut Ctx<'_>,
        seller: AccountId,
        id: SessionId,
        tracking: DropoffTracking,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        self.guard(
            id,
            Some((seller, Party::Seller)),
            &[S::TrackingMissing],
            Self::t1_plus_b(ctx.config),
            ctx.day,
        )?;
        let day = ctx.day;
        let mut events = Vec::new();
        match tracking {
            DropoffTracking::Informed(number) => {
                self.get(id)?.tracking = Tracking::Informed(number);
                self.move_to(id, S::InTransit, Rule::LateTracking, Actor::Seller, day, &mut events)?;
            }
            DropoffTracking::DeclaredLost => {
                let s = self.get(id)?;
                s.tracking = Tracking::DeclaredLost;
                s.force_internal = true;
                self.move_to(id, S::Disputed, Rule::LateTracking, Actor::Seller, day, &mut events)?;
                events.push(self.dispute_required(id, DisputeReason::NotDelivered)?);
            }
            DropoffTracking::Silent => {
                let state = self.get(id)?.state;
                return Err(ExchangeError::WrongState { session: id, state });
            }
        }
        Ok(events)
    }

    pub fn mark_delivered(
        &mut self,
        ctx: &mut Ctx<'_>,
        id: SessionId,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        self.guard(id, None, &[S::InTransit], |_| None, ctx.day)?;
        self.get(id)?.delivered = true;
        let mut events = Vec::new();
        self.move_to(id, S::Delivered, Rule::Delivery, Actor::Carrier, ctx.day, &mut events)?;
        Ok(events)
    }

    /// Buyer cannot find the QR code and asks the seller for it.
    pub fn request_qr(
        &mut self,
        ctx: &mut Ctx<'_>,
        buyer: AccountId,
        id: SessionId,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        let s = self.guard(
            id,
            Some((buyer, Party::Buyer)),
            &[S::Delivered],
            Self::t1_plus_b(ctx.config),
            ctx.day,
        )?;
        let deadline = s.anchors.t1.unwrap_or(0) + ctx.config.deadlines.b;
        if ctx.day + ctx.config.deadlines.b_prime >= deadline {
            return Err(ExchangeError::QrRequestTooLate {
                day: ctx.day,
                deadline,
            });
        }
        self.get(id)?.anchors.t1_prime = Some(ctx.day);
        let mut events = Vec::new();
        self.move_to(id, S::AwaitingQr, Rule::QrMissing, Actor::Buyer, ctx.day, &mut events)?;
        Ok(events)
    }

    pub fn answer_qr(
        &mut self,
        ctx: &mut Ctx<'_>,
        seller: AccountId,
        id: SessionId,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        let bp = ctx.config.deadlines.b_prime;
        self.guard(
            id,
            Some((seller, Party::Seller)),
            &[S::AwaitingQr],
            |s| s.anchors.t1_prime.map(|t| t + bp),
            ctx.day,
        )?;
        let mut events = vec![ExchangeEvent::QrSupplied {
            session: id,
            by_market: false,
        }];
        self.move_to(id, S::Delivered, Rule::QrAnswer, Actor::Seller, ctx.day, &mut events)?;
        Ok(events)
    }

    pub fn confirm_receipt(
        &mut self,
        ctx: &mut Ctx<'_>,
        buyer: AccountId,
        id: SessionId,
        via: ReceiptVia,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        let s = self.guard(
            id,
            Some((buyer, Party::Buyer)),
            &[S::Delivered, S::AwaitingQr],
            Self::t1_plus_b(ctx.config),
            ctx.day,
        )?;
        let rule = match &via {
            ReceiptVia::Scan(nonce) => {
                let issued = s.qr.as_ref().map(|q| q.value.as_str());
                // The code is only in the buyer's hands once it is in the
                // package or has been re-sent.
                let reachable = s.state == S::Delivered;
                if issued != Some(nonce.as_str()) || !reachable {
                    return Err(ExchangeError::NonceMismatch);
                }
                Rule::Scan
            }
            ReceiptVia::Manual => Rule::ConfirmOrClaim,
        };
        let day = ctx.day;
        let s = self.get(id)?;
        s.receipt_confirmed = true;
        s.scanned_on_time = rule == Rule::Scan;
        s.anchors.t2 = Some(day);
        let mut events = Vec::new();
        self.move_to(id, S::AwaitingSatisfaction, rule, Actor::Buyer, day, &mut events)?;
        Ok(events)
    }

    pub fn answer_satisfaction(
        &mut self,
        ctx: &mut Ctx<'_>,
        buyer: AccountId,
        id: SessionId,
        satisfied: bool,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        let c = ctx.config.deadlines.c;
        self.guard(
            id,
            Some((buyer, Party::Buyer)),
            &[S::AwaitingSatisfaction],
            |s| s.anchors.t2.map(|t| t + c),
            ctx.day,
        )?;
        let day = ctx.day;
        let mut events = Vec::new();
        if satisfied {
            self.release(ctx, id, Disposition::ToSeller)?;
            self.move_to(id, S::Settled, Rule::Satisfaction, Actor::Buyer, day, &mut events)?;
            self.finish(
                id,
                Outcome {
                    kind: OutcomeKind::SuccessConfirmed,
                    satisfaction: Some(true),
                },
                &mut events,
            )?;
        } else {
            self.get(id)?.anchors.t3 = Some(day);
            self.move_to(id, S::ResolutionWindow, Rule::Satisfaction, Actor::Buyer, day, &mut events)?;
        }
        Ok(events)
    }

    pub fn resolve_mutually(
        &mut self,
        ctx: &mut Ctx<'_>,
        party: AccountId,
        id: SessionId,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        let d = ctx.config.deadlines.d;
        let s = self.guard(
            id,
            Some((party, Party::Either)),
            &[S::ResolutionWindow],
            |s| s.anchors.t3.map(|t| t + d),
            ctx.day,
        )?;
        let (seller, actor) = (s.seller, if party == s.buyer { Actor::Buyer } else { Actor::Seller });
        let day = ctx.day;
        ctx.reputation
            .penalize(
                Caller::Exchange,
                seller,
                ReputationReason::Resolution,
                ctx.config.reputation.resolution_penalty,
                day,
                Some(id),
            )
            .ok();
        self.release(ctx, id, Disposition::ToSeller)?;
        let mut events = Vec::new();
        self.move_to(id, S::Settled, Rule::Resolution, actor, day, &mut events)?;
        self.finish(
            id,
            Outcome {
                kind: OutcomeKind::ResolvedMutually,
                satisfaction: Some(false),
            },
            &mut events,
        )?;
        Ok(events)
    }

    /// Buyer opens arbitration.
    pub fn claim(
        &mut self,
        ctx: &mut Ctx<'_>,
        buyer: AccountId,
        id: SessionId,
        reason: DisputeReason,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        let s = self.guard(
            id,
            Some((buyer, Party::Buyer)),
            &[
                S::InTransit,
                S::TrackingMissing,
                S::Delivered,
                S::AwaitingQr,
                S::ResolutionWindow,
            ],
            |_| None,
            ctx.day,
        )?;
        let rule = match s.state {
            S::TrackingMissing => Rule::LateTracking,
            S::ResolutionWindow => Rule::Resolution,
            _ => Rule::ConfirmOrClaim,
        };
        let deadline = match s.state {
            S::ResolutionWindow => s.anchors.t3.map(|t| t + ctx.config.deadlines.d),
            _ => s.anchors.t1.map(|t| t + ctx.config.deadlines.b),
        };
        if let Some(d) = deadline.filter(|d| ctx.day > *d) {
            return Err(ExchangeError::DeadlineExpired {
                session: id,
                deadline: d,
            });
        }
        let mut events = Vec::new();
        self.move_to(id, S::Disputed, rule, Actor::Buyer, ctx.day, &mut events)?;
        events.push(self.dispute_required(id, reason)?);
        Ok(events)
    }

    fn dispute_required(&self, id: SessionId, reason: DisputeReason) -> ExchangeResult<ExchangeEvent> {
        let s = self
            .sessions
            .get(&id)
            .ok_or(ExchangeError::UnknownSession(id))?;
        Ok(ExchangeEvent::DisputeRequired {
            session: id,
            reason,
            subject: DisputeSubject::Escrow,
            amount: s.price,
            force_internal: s.force_internal,
        })
    }

    /// Cancellation; the stage follows from the session state.
    pub fn cancel(
        &mut self,
        ctx: &mut Ctx<'_>,
        party: AccountId,
        id: SessionId,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        let s = self
            .sessions
            .get(&id)
            .ok_or(ExchangeError::UnknownSession(id))?;
        if party != s.buyer && party != s.seller {
            return Err(ExchangeError::WrongParty(party));
        }
        let is_buyer = party == s.buyer;
        let day = ctx.day;
        let dl = &ctx.config.deadlines;
        let stage = match s.state {
            S::PurchaseRequested | S::SellerValidated | S::TermsAgreed => Rule::C1,
            S::EscrowFunded | S::QrIssued | S::AwaitingDropoff => Rule::C2,
            S::InTransit | S::TrackingMissing => Rule::C3,
            S::Delivered | S::AwaitingQr | S::AwaitingSatisfaction | S::ResolutionWindow => Rule::C4,
            S::Settled
                if s.outcome.is_some_and(|o| o.is_success()) && s.anchors.t1.is_some() =>
            {
                Rule::C5
            }
            state => return Err(ExchangeError::WrongState { session: id, state }),
        };
        if matches!(stage, Rule::C3 | Rule::C4 | Rule::C5) && !is_buyer {
            return Err(ExchangeError::WrongParty(party));
        }
        let window_end = match stage {
            Rule::C4 => s.anchors.t1.map(|t| t + dl.e),
            Rule::C5 => s.anchors.t1.map(|t| t + dl.f),
            _ => None,
        };
        if let Some(closed) = window_end.filter(|d| day > *d) {
            return Err(ExchangeError::CancellationWindowClosed { session: id, closed });
        }
        let actor = if is_buyer { Actor::Buyer } else { Actor::Seller };
        let mut events = Vec::new();
        match stage {
            Rule::C1 => {
                self.move_to(id, S::Cancelled, Rule::C1, actor, day, &mut events)?;
                self.finish(id, cancelled(Rule::C1), &mut events)?;
            }
            Rule::C2 => {
                self.release(ctx, id, Disposition::ToBuyer)?;
                self.move_to(id, S::Cancelled, Rule::C2, actor, day, &mut events)?;
                self.finish(id, cancelled(Rule::C2), &mut events)?;
            }
            Rule::C3 | Rule::C4 => {
                self.get(id)?.return_request = Some(ReturnRequest {
                    stage,
                    requested: day,
                    completed: false,
                });
                self.move_to(id, S::ReturnPending, stage, actor, day, &mut events)?;
                events.push(ExchangeEvent::ReturnRequested { session: id, rule: stage });
            }
            _ => {
                let s = self.get(id)?;
                if s.return_request.is_some() {
                    return Err(ExchangeError::WrongState { session: id, state: S::Settled });
                }
                s.return_request = Some(ReturnRequest {
                    stage: Rule::C5,
                    requested: day,
                    completed: false,
                });
                events.push(ExchangeEvent::ReturnRequested { session: id, rule: Rule::C5 });
            }
        }
        Ok(events)
    }

    /// Seller confirms the returned package arrived.
    pub fn confirm_return(
        &mut self,
        ctx: &mut Ctx<'_>,
        seller: AccountId,
        id: SessionId,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        let s = self
            .sessions
            .get(&id)
            .ok_or(ExchangeError::UnknownSession(id))?;
        if seller != s.seller {
            return Err(ExchangeError::WrongParty(seller));
        }
        let Some(request) = s.return_request.clone().filter(|r| !r.completed) else {
            return Err(ExchangeError::WrongState { session: id, state: s.state });
        };
        let day = ctx.day;
        let mut events = Vec::new();
        match request.stage {
            Rule::C3 | Rule::C4 if s.state == S::ReturnPending => {
                let price = s.price;
                self.release(ctx, id, Disposition::ToBuyer)?;
                if let Some(r) = self.get(id)?.return_request.as_mut() {
                    r.completed = true;
                }
                self.move_to(id, S::Cancelled, request.stage, Actor::Seller, day, &mut events)?;
                events.push(ExchangeEvent::ReturnCompleted {
                    session: id,
                    rule: request.stage,
                    refunded: price,
                    shortfall: 0,
                });
                self.finish(id, cancelled(request.stage), &mut events)?;
            }
            Rule::C5 => {
                let (refunded, shortfall) = self.clawback(ctx, id, s.price)?;
                if let Some(r) = self.get(id)?.return_request.as_mut() {
                    r.completed = true;
                }
                events.push(ExchangeEvent::ReturnCompleted {
                    session: id,
                    rule: Rule::C5,
                    refunded,
                    shortfall,
                });
                if shortfall > 0 {
                    events.push(ExchangeEvent::DisputeRequired {
                        session: id,
                        reason: DisputeReason::PartyUnresponsive,
                        subject: DisputeSubject::Clawback,
                        amount: shortfall,
                        force_internal: false,
                    });
                }
            }
            _ => return Err(ExchangeError::WrongState { session: id, state: s.state }),
        }
        Ok(events)
    }

    /// Recovers up to `amount` (in the session token) from the seller for the
    /// buyer: first the seller's balance, then the seller stake. Returns
    /// (recovered, shortfall) in session-token units.
    pub fn clawback(
        &mut self,
        ctx: &mut Ctx<'_>,
        id: SessionId,
        amount: Amount,
    ) -> ExchangeResult<(Amount, Amount)> {
        let s = self
            .sessions
            .get(&id)
            .ok_or(ExchangeError::UnknownSession(id))?;
        let (buyer, seller, token) = (s.buyer, s.seller, s.token);
        let from_balance = ctx.ledger.balance(seller, token).min(amount);
        if from_balance > 0 {
            ctx.ledger.transfer(seller, buyer, from_balance, token)?;
        }
        let mut remaining = amount - from_balance;
        if remaining > 0 {
            let rate = ctx.config.ledger.rate_at(ctx.day);
            let want_lzs = match token {
                TokenKind::Lzs => remaining,
                _ => rate.lzdc_to_lzs(remaining),
            };
            let moved = ctx.ledger.debit_stake(Caller::Exchange, seller, buyer, want_lzs)?;
            let covered = match token {
                TokenKind::Lzs => moved,
                _ if moved == want_lzs => remaining,
                _ => rate.lzs_to_lzdc(moved).min(remaining),
            };
            remaining -= covered;
        }
        Ok((amount - remaining, remaining))
    }

    fn release(&mut self, ctx: &mut Ctx<'_>, id: SessionId, disposition: Disposition) -> ExchangeResult<()> {
        let seller = self.get(id)?.seller;
        let rate = ctx.config.ledger.rate_at(ctx.day);
        ctx.ledger
            .settle_escrow(Caller::Exchange, id, disposition, seller, rate)?;
        Ok(())
    }

    /// Executes an arbitration ruling on a disputed session. The buyer is
    /// always the claimant.
    pub fn apply_ruling(
        &mut self,
        ctx: &mut Ctx<'_>,
        id: SessionId,
        ruling: Ruling,
        subject: DisputeSubject,
        amount: Amount,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        let s = self
            .sessions
            .get(&id)
            .ok_or(ExchangeError::UnknownSession(id))?;
        let mut events = Vec::new();
        match subject {
            DisputeSubject::Clawback => {
                if ruling == Ruling::ForClaimant {
                    let (refunded, shortfall) = self.clawback(ctx, id, amount)?;
                    events.push(ExchangeEvent::ReturnCompleted {
                        session: id,
                        rule: Rule::C5,
                        refunded,
                        shortfall,
                    });
                }
            }
            DisputeSubject::Escrow => {
                if s.state != S::Disputed {
                    return Err(ExchangeError::WrongState { session: id, state: s.state });
                }
                let (disposition, to) = match ruling {
                    Ruling::ForClaimant => (Disposition::ToBuyer, S::Cancelled),
                    Ruling::ForRespondent => (Disposition::ToSeller, S::Settled),
                };
                self.release(ctx, id, disposition)?;
                self.move_to(id, to, Rule::Ruling, Actor::Arbitration, ctx.day, &mut events)?;
                self.finish(
                    id,
                    Outcome {
                        kind: OutcomeKind::Arbitrated { ruling },
                        satisfaction: None,
                    },
                    &mut events,
                )?;
            }
        }
        Ok(events)
    }

    /// Fires every timeout due at `ctx.day`, sessions in id order.
    pub fn tick(
        &mut self,
        ctx: &mut Ctx<'_>,
        rng: &mut impl RngCore,
    ) -> ExchangeResult<Vec<ExchangeEvent>> {
        let _ = rng;
        let mut events = Vec::new();
        let ids: Vec<SessionId> = self
            .sessions
            .values()
            .filter(|s| !s.state.is_terminal() || s.return_request.as_ref().is_some_and(|r| !r.completed))
            .map(|s| s.id)
            .collect();
        for id in ids {
            // A timeout can land in a state whose own deadline has also passed.
            while self.fire_timeout(ctx, id, &mut events)? {}
        }
        Ok(events)
    }

    /// Day after which the session's current state times out.
    pub fn expiry(&self, s: &Session, cfg: &EngineConfig) -> Option<Day> {
        let dl = &cfg.deadlines;
        match s.state {
            S::PurchaseRequested | S::SellerValidated | S::TermsAgreed => Some(s.entered + dl.pre_escrow),
            S::EscrowFunded | S::QrIssued | S::AwaitingDropoff => s.anchors.t0.map(|t| t + dl.a),
            S::TrackingMissing | S::InTransit | S::Delivered => s.anchors.t1.map(|t| t + dl.b),
            S::AwaitingQr => s.anchors.t1_prime.map(|t| t + dl.b_prime),
            S::AwaitingSatisfaction => s.anchors.t2.map(|t| t + dl.c),
            S::ResolutionWindow => s.anchors.t3.map(|t| t + dl.d),
            S::ReturnPending => s.return_request.as_ref().map(|r| r.requested + dl.return_window),
            S::Settled => s
                .return_request
                .as_ref()
                .filter(|r| !r.completed)
                .map(|r| r.requested + dl.return_window),
            _ => None,
        }
    }

    fn fire_timeout(
        &mut self,
        ctx: &mut Ctx<'_>,
        id: SessionId,
        events: &mut Vec<ExchangeEvent>,
    ) -> ExchangeResult<bool> {
        let s = self.get(id)?.clone();
        let Some(expiry) = self.expiry(&s, ctx.config) else {
            return Ok(false);
        };
        if ctx.day <= expiry {
            return Ok(false);
        }
        let day = ctx.day;
        let from = s.state;
        match from {
            S::PurchaseRequested | S::SellerValidated | S::TermsAgreed => {
                self.move_to(id, S::Cancelled, Rule::C1, Actor::Clock, day, events)?;
                self.finish(id, cancelled(Rule::C1), events)?;
            }
            S::EscrowFunded | S::QrIssued | S::AwaitingDropoff => {
                self.release(ctx, id, Disposition::ToBuyer)?;
                self.move_to(id, S::Cancelled, Rule::PrepareShipment, Actor::Clock, day, events)?;
                self.finish(id, cancelled(Rule::C2), events)?;
            }
            S::TrackingMissing => {
                self.move_to(id, S::Disputed, Rule::LateTracking, Actor::Clock, day, events)?;
                events.push(self.dispute_required(id, DisputeReason::PartyUnresponsive)?);
            }
            S::InTransit | S::Delivered => {
                self.release(ctx, id, Disposition::ToSeller)?;
                self.move_to(id, S::Settled, Rule::ConfirmOrClaim, Actor::Clock, day, events)?;
                self.finish(
                    id,
                    Outcome {
                        kind: OutcomeKind::SuccessByDefault,
                        satisfaction: None,
                    },
                    events,
                )?;
            }
            S::AwaitingQr => {
                ctx.reputation
                    .penalize(
                        Caller::Exchange,
                        s.seller,
                        ReputationReason::QrNonResponse,
                        ctx.config.reputation.qr_penalty,
                        day,
                        Some(id),
                    )
                    .ok();
                self.get(id)?.qr_supplied_by_market = true;
                events.push(ExchangeEvent::QrSupplied {
                    session: id,
                    by_market: true,
                });
                // The re-sent code keeps the original confirmation deadline;
                // T1 + B > T1' + B' guarantees time remains.
                self.move_to(id, S::Delivered, Rule::QrAnswer, Actor::Clock, day, events)?;
            }
            S::AwaitingSatisfaction => {
                self.release(ctx, id, Disposition::ToSeller)?;
                self.move_to(id, S::Settled, Rule::SatisfactionSilence, Actor::Clock, day, events)?;
                self.finish(
                    id,
                    Outcome {
                        kind: OutcomeKind::SuccessByDefault,
                        satisfaction: None,
                    },
                    events,
                )?;
            }
            S::ResolutionWindow => {
                self.move_to(id, S::Disputed, Rule::Resolution, Actor::Clock, day, events)?;
                events.push(self.dispute_required(id, DisputeReason::Defective)?);
            }
            S::ReturnPending => {
                if let Some(r) = self.get(id)?.return_request.as_mut() {
                    r.completed = true;
                }
                self.move_to(id, S::Disputed, Rule::ReturnTimeout, Actor::Clock, day, events)?;
                events.push(self.dispute_required(id, DisputeReason::PartyUnresponsive)?);
            }
            S::Settled => {
                if let Some(r) = self.get(id)?.return_request.as_mut() {
                    r.completed = true;
                }
                events.push(ExchangeEvent::DisputeRequired {
                    session: id,
                    reason: DisputeReason::PartyUnresponsive,
                    subject: DisputeSubject::Clawback,
                    amount: s.price,
                    force_internal: false,
                });
            }
            _ => return Ok(false),
        }
        self.get(id)?.timed_out_from = Some(from);
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Party {
    Buyer,
    Seller,
    Either,
}

fn cancelled(stage: Rule) -> Outcome {
    Outcome {
        kind: OutcomeKind::Cancelled { stage },
        satisfaction: None,
    }
}
