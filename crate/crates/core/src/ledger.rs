//! Token accounting for LZS, LZSP and LZDC.
//!
//! Every token unit is always in exactly one place: an account balance, a
//! locked escrow, a stake (seller deposit, court stake or governance lock) or a
//! court fee pool. Supply changes only through genesis, mint and burn, each of
//! which is journaled, so the per-token identity
//!
//! ```text
//! balances + escrow + staked + pooled = initial + minted - burned
//! ```
//!
//! holds exactly after every operation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    apply_ppm, AccountId, Amount, Caller, CaseId, Day, Ppm, Rate, SessionId, PPM,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    /// Utility token: seller deposits, payments, court fees.
    #[serde(rename = "LZS")]
    Lzs,
    /// Participation token: minted only as an incentive, one token one vote.
    #[serde(rename = "LZSP")]
    Lzsp,
    /// Stable token pegged 1:1 to USD.
    #[serde(rename = "LZDC")]
    Lzdc,
}

impl TokenKind {
    pub const ALL: [TokenKind; 3] = [TokenKind::Lzs, TokenKind::Lzsp, TokenKind::Lzdc];

    fn index(self) -> usize {
        match self {
            TokenKind::Lzs => 0,
            TokenKind::Lzsp => 1,
            TokenKind::Lzdc => 2,
        }
    }

    /// Tokens that can pay for goods and fund an escrow.
    pub fn is_payment_token(self) -> bool {
        matches!(self, TokenKind::Lzs | TokenKind::Lzdc)
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenKind::Lzs => "LZS",
            TokenKind::Lzsp => "LZSP",
            TokenKind::Lzdc => "LZDC",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Balances {
    #[serde(rename = "LZS", default)]
    pub lzs: Amount,
    #[serde(rename = "LZSP", default)]
    pub lzsp: Amount,
    #[serde(rename = "LZDC", default)]
    pub lzdc: Amount,
}

impl Balances {
    pub fn get(&self, token: TokenKind) -> Amount {
        match token {
            TokenKind::Lzs => self.lzs,
            TokenKind::Lzsp => self.lzsp,
            TokenKind::Lzdc => self.lzdc,
        }
    }

    fn slot(&mut self, token: TokenKind) -> &mut Amount {
        match token {
            TokenKind::Lzs => &mut self.lzs,
            TokenKind::Lzsp => &mut self.lzsp,
            TokenKind::Lzdc => &mut self.lzdc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccountRole {
    Buyer,
    Seller,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StakeStatus {
    Active,
    Withdrawable,
    Slashed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakePosition {
    pub amount: Amount,
    pub start: Day,
    pub duration: Day,
    pub status: StakeStatus,
}

impl StakePosition {
    pub fn is_active(&self) -> bool {
        self.status == StakeStatus::Active
    }

    pub fn matures_on(&self) -> Day {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub id: AccountId,
    pub label: String,
    pub role: AccountRole,
    pub balances: Balances,
    pub stake: Option<StakePosition>,
    /// Token the account wants exchange proceeds delivered in.
    pub payout_preference: Option<TokenKind>,
}

impl Account {
    pub fn has_active_stake(&self) -> bool {
        self.stake.as_ref().is_some_and(StakePosition::is_active)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EscrowStatus {
    Locked,
    ReleasedToSeller,
    RefundedToBuyer,
    SlashedSplit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscrowAccount {
    pub session: SessionId,
    pub payer: AccountId,
    pub amount: Amount,
    pub token: TokenKind,
    pub status: EscrowStatus,
}

/// How a locked escrow is released.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Disposition {
    ToSeller,
    ToBuyer,
    /// Seller receives `seller_ppm` of the amount (floor), buyer the rest.
    Split { seller_ppm: Ppm },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub from: AccountId,
    pub to: AccountId,
    pub amount: Amount,
    pub token: TokenKind,
}

/// Ledger effects, drained by the engine into the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LedgerEvent {
    AccountCreated {
        account: AccountId,
        label: String,
        role: AccountRole,
    },
    Genesis {
        account: AccountId,
        token: TokenKind,
        amount: Amount,
    },
    Mint {
        account: AccountId,
        token: TokenKind,
        amount: Amount,
        caller: Caller,
        reason: String,
    },
    Burn {
        account: Option<AccountId>,
        token: TokenKind,
        amount: Amount,
        caller: Caller,
        reason: String,
    },
    Transfer {
        from: AccountId,
        to: AccountId,
        token: TokenKind,
        amount: Amount,
    },
    Converted {
        account: AccountId,
        from: TokenKind,
        to: TokenKind,
        amount_in: Amount,
        amount_out: Amount,
    },
    StakeDeposited {
        account: AccountId,
        amount: Amount,
        start: Day,
        duration: Day,
    },
    StakeWithdrawable {
        account: AccountId,
    },
    StakeWithdrawn {
        account: AccountId,
        amount: Amount,
        yield_paid: Amount,
    },
    StakeSlashed {
        account: AccountId,
        amount: Amount,
        beneficiary: Option<AccountId>,
    },
    StakeDebited {
        account: AccountId,
        to: AccountId,
        amount: Amount,
    },
    EscrowLocked {
        session: SessionId,
        payer: AccountId,
        token: TokenKind,
        amount: Amount,
    },
    EscrowSettled {
        session: SessionId,
        disposition: Disposition,
        status: EscrowStatus,
        seller: AccountId,
        seller_amount: Amount,
        buyer_amount: Amount,
    },
    CourtStakeDeposited {
        account: AccountId,
        amount: Amount,
    },
    CourtStakeSlashed {
        account: AccountId,
        case: CaseId,
        amount: Amount,
    },
    PoolDeposit {
        case: CaseId,
        from: AccountId,
        amount: Amount,
    },
    PoolPayout {
        case: CaseId,
        to: AccountId,
        amount: Amount,
    },
    GovernanceLocked {
        account: AccountId,
        amount: Amount,
    },
    GovernanceUnlocked {
        account: AccountId,
        amount: Amount,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("{account} holds {available} {token} micro-units, needs {needed}")]
    InsufficientFunds {
        account: AccountId,
        token: TokenKind,
        needed: Amount,
        available: Amount,
    },
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("{0} already has an active stake")]
    AlreadyStaked(AccountId),
    #[error("stake {amount} below the seller-deposit minimum {minimum}")]
    BelowMinimumStake { amount: Amount, minimum: Amount },
    #[error("escrow for {0} already exists")]
    DuplicateEscrow(SessionId),
    #[error("{0} cannot be used here")]
    UnsupportedToken(TokenKind),
    #[error("escrow for {0} already settled")]
    AlreadySettled(SessionId),
    #[error("{0} is not authorized for this operation")]
    UnauthorizedCaller(Caller),
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("no escrow for {0}")]
    NoEscrow(SessionId),
    #[error("{0} has no active stake")]
    NoActiveStake(AccountId),
    #[error("stake of {account} locked until day {until}")]
    StakeLocked { account: AccountId, until: Day },
    #[error("{account} has no {token} governance lock")]
    NoGovernanceLock { account: AccountId, token: TokenKind },
    #[error("fee pool for {0} holds {1}, payout needs {2}")]
    PoolShortfall(CaseId, Amount, Amount),
}

pub type LedgerResult<T> = Result<T, LedgerError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
struct SupplyCounters {
    initial: Amount,
    minted: Amount,
    burned: Amount,
}

/// Per-token conservation line.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupplyLine {
    pub balances: Amount,
    pub escrow: Amount,
    pub staked: Amount,
    pub pooled: Amount,
    pub initial: Amount,
    pub minted: Amount,
    pub burned: Amount,
}

impl SupplyLine {
    pub fn held(&self) -> u128 {
        self.balances as u128 + self.escrow as u128 + self.staked as u128 + self.pooled as u128
    }

    pub fn expected(&self) -> i128 {
        self.initial as i128 + self.minted as i128 - self.burned as i128
    }

    pub fn holds(&self) -> bool {
        self.held() as i128 == self.expected()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub tokens: BTreeMap<TokenKind, SupplyLine>,
}

impl ConservationReport {
    pub fn holds(&self) -> bool {
        self.tokens.values().all(SupplyLine::holds)
    }

    pub fn line(&self, token: TokenKind) -> SupplyLine {
        self.tokens.get(&token).copied().unwrap_or_default()
    }

    /// Human-readable list of failing tokens.
    pub fn violations(&self) -> Vec<String> {
        self.tokens
            .iter()
            .filter(|(_, line)| !line.holds())
            .map(|(token, line)| {
                format!(
                    "{token}: held {} != initial {} + minted {} - burned {}",
                    line.held(),
                    line.initial,
                    line.minted,
                    line.burned
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Ledger {
    accounts: BTreeMap<AccountId, Account>,
    next_account: u64,
    escrows: BTreeMap<SessionId, EscrowAccount>,
    court_stakes: BTreeMap<AccountId, Amount>,
    governance_locks: BTreeMap<AccountId, Amount>,
    pools: BTreeMap<CaseId, Amount>,
    supply: [SupplyCounters; 3],
    #[serde(skip)]
    journal: Vec<LedgerEvent>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Takes the events recorded since the last drain.
    pub fn drain_journal(&mut self) -> Vec<LedgerEvent> {
        std::mem::take(&mut self.journal)
    }

    pub fn has_pending_journal(&self) -> bool {
        !self.journal.is_empty()
    }

    pub fn create_account(&mut self, role: AccountRole, label: impl Into<String>) -> AccountId {
        let id = AccountId(self.next_account);
        self.next_account += 1;
        let label = label.into();
        self.accounts.insert(
            id,
            Account {
                id,
                label: label.clone(),
                role,
                balances: Balances::default(),
                stake: None,
                payout_preference: None,
            },
        );
        self.journal.push(LedgerEvent::AccountCreated {
            account: id,
            label,
            role,
        });
        id
    }

    pub fn account(&self, id: AccountId) -> LedgerResult<&Account> {
        self.accounts.get(&id).ok_or(LedgerError::UnknownAccount(id))
    }

    fn account_mut(&mut self, id: AccountId) -> LedgerResult<&mut Account> {
        self.accounts
            .get_mut(&id)
            .ok_or(LedgerError::UnknownAccount(id))
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Account> {
        self.accounts.values()
    }

    pub fn contains(&self, id: AccountId) -> bool {
        self.accounts.contains_key(&id)
    }

    pub fn set_payout_preference(
        &mut self,
        id: AccountId,
        token: Option<TokenKind>,
    ) -> LedgerResult<()> {
        if let Some(token) = token {
            if !token.is_payment_token() {
                return Err(LedgerError::UnsupportedToken(token));
            }
        }
        self.account_mut(id)?.payout_preference = token;
        Ok(())
    }

    /// Spendable balance.
    pub fn balance(&self, id: AccountId, token: TokenKind) -> Amount {
        self.accounts
            .get(&id)
            .map(|a| a.balances.get(token))
            .unwrap_or(0)
    }

    /// LZSP held, including tokens locked for delegation.
    pub fn lzsp_holdings(&self, id: AccountId) -> Amount {
        self.balance(id, TokenKind::Lzsp) + self.governance_lock(id)
    }

    /// Initial plus minted minus burned.
    pub fn circulating(&self, token: TokenKind) -> Amount {
        let c = &self.supply[token.index()];
        (c.initial + c.minted).saturating_sub(c.burned)
    }

    pub fn governance_lock(&self, id: AccountId) -> Amount {
        self.governance_locks.get(&id).copied().unwrap_or(0)
    }

    pub fn court_stake(&self, id: AccountId) -> Amount {
        self.court_stakes.get(&id).copied().unwrap_or(0)
    }

    pub fn court_stakes(&self) -> &BTreeMap<AccountId, Amount> {
        &self.court_stakes
    }

    pub fn pool(&self, case: CaseId) -> Amount {
        self.pools.get(&case).copied().unwrap_or(0)
    }

    pub fn escrow(&self, session: SessionId) -> Option<&EscrowAccount> {
        self.escrows.get(&session)
    }

    pub fn escrows(&self) -> impl Iterator<Item = &EscrowAccount> {
        self.escrows.values()
    }

    fn debit(&mut self, id: AccountId, token: TokenKind, amount: Amount) -> LedgerResult<()> {
        let account = self.account_mut(id)?;
        let slot = account.balances.slot(token);
        if *slot < amount {
            return Err(LedgerError::InsufficientFunds {
                account: id,
                token,
                needed: amount,
                available: *slot,
            });
        }
        *slot -= amount;
        Ok(())
    }

    fn credit(&mut self, id: AccountId, token: TokenKind, amount: Amount) -> LedgerResult<()> {
        let account = self.account_mut(id)?;
        *account.balances.slot(token) += amount;
        Ok(())
    }

    fn require_funds(&self, id: AccountId, token: TokenKind, amount: Amount) -> LedgerResult<()> {
        let available = self.account(id)?.balances.get(token);
        if available < amount {
            return Err(LedgerError::InsufficientFunds {
                account: id,
                token,
                needed: amount,
                available,
            });
        }
        Ok(())
    }

    /// Initial allocation; counts toward the initial supply rather than minting.
    pub fn genesis(&mut self, id: AccountId, token: TokenKind, amount: Amount) -> LedgerResult<()> {
        if amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        self.credit(id, token, amount)?;
        self.supply[token.index()].initial += amount;
        self.journal.push(LedgerEvent::Genesis {
            account: id,
            token,
            amount,
        });
        Ok(())
    }

    /// New supply. LZSP may only be minted by the incentive engine.
    pub fn mint(
        &mut self,
        caller: Caller,
        to: AccountId,
        token: TokenKind,
        amount: Amount,
        reason: &str,
    ) -> LedgerResult<()> {
        match (token, caller) {
            (_, Caller::Agent) => return Err(LedgerError::UnauthorizedCaller(caller)),
            (TokenKind::Lzsp, c) if c != Caller::Incentives => {
                return Err(LedgerError::UnauthorizedCaller(caller))
            }
            _ => {}
        }
        if amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        self.credit(to, token, amount)?;
        self.supply[token.index()].minted += amount;
        self.journal.push(LedgerEvent::Mint {
            account: to,
            token,
            amount,
            caller,
            reason: reason.to_string(),
        });
        Ok(())
    }

    /// Removes tokens from an account balance and from supply.
    pub fn burn(
        &mut self,
        caller: Caller,
        from: AccountId,
        token: TokenKind,
        amount: Amount,
        reason: &str,
    ) -> LedgerResult<()> {
        if amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        self.debit(from, token, amount)?;
        self.supply[token.index()].burned += amount;
        self.journal.push(LedgerEvent::Burn {
            account: Some(from),
            token,
            amount,
            caller,
            reason: reason.to_string(),
        });
        Ok(())
    }

    pub fn transfer(
        &mut self,
        from: AccountId,
        to: AccountId,
        amount: Amount,
        token: TokenKind,
    ) -> LedgerResult<Receipt> {
        if amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        self.account(to)?;
        self.debit(from, token, amount)?;
        self.credit(to, token, amount)?;
        self.journal.push(LedgerEvent::Transfer {
            from,
            to,
            token,
            amount,
        });
        Ok(Receipt {
            from,
            to,
            amount,
            token,
        })
    }

    /// Converts between LZS and LZDC at `rate`, rounding toward zero.
    pub fn convert(
        &mut self,
        id: AccountId,
        from: TokenKind,
        amount: Amount,
        rate: Rate,
    ) -> LedgerResult<Amount> {
        let to = match from {
            TokenKind::Lzs => TokenKind::Lzdc,
            TokenKind::Lzdc => TokenKind::Lzs,
            TokenKind::Lzsp => return Err(LedgerError::UnsupportedToken(from)),
        };
        if amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        self.debit(id, from, amount)?;
        let out = convert_amount(from, amount, rate);
        self.supply[from.index()].burned += amount;
        self.supply[to.index()].minted += out;
        self.credit(id, to, out)?;
        self.journal.push(LedgerEvent::Converted {
            account: id,
            from,
            to,
            amount_in: amount,
            amount_out: out,
        });
        Ok(out)
    }

    pub fn stake_deposit(
        &mut self,
        seller: AccountId,
        amount: Amount,
        duration: Day,
        today: Day,
        minimum: Amount,
    ) -> LedgerResult<StakePosition> {
        let account = self.account(seller)?;
        if account.has_active_stake() {
            return Err(LedgerError::AlreadyStaked(seller));
        }
        if amount < minimum {
            return Err(LedgerError::BelowMinimumStake { amount, minimum });
        }
        if amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        self.debit(seller, TokenKind::Lzs, amount)?;
        let position = StakePosition {
            amount,
            start: today,
            duration,
            status: StakeStatus::Active,
        };
        self.account_mut(seller)?.stake = Some(position.clone());
        self.journal.push(LedgerEvent::StakeDeposited {
            account: seller,
            amount,
            start: today,
            duration,
        });
        Ok(position)
    }

    /// Releases a matured stake plus yield. The position passes through
    /// `withdrawable` and is then removed.
    pub fn stake_withdraw(
        &mut self,
        seller: AccountId,
        today: Day,
        yield_ppm: Ppm,
    ) -> LedgerResult<(Amount, Amount)> {
        let position = self
            .account(seller)?
            .stake
            .clone()
            .filter(StakePosition::is_active)
            .ok_or(LedgerError::NoActiveStake(seller))?;
        if today < position.matures_on() {
            return Err(LedgerError::StakeLocked {
                account: seller,
                until: position.matures_on(),
            });
        }
        let account = self.account_mut(seller)?;
        if let Some(stake) = account.stake.as_mut() {
            stake.status = StakeStatus::Withdrawable;
        }
        self.journal
            .push(LedgerEvent::StakeWithdrawable { account: seller });
        let yield_paid = apply_ppm(position.amount, yield_ppm);
        let account = self.account_mut(seller)?;
        account.stake = None;
        account.balances.lzs += position.amount;
        if yield_paid > 0 {
            self.mint(Caller::Ledger, seller, TokenKind::Lzs, yield_paid, "stake-yield")?;
        }
        self.journal.push(LedgerEvent::StakeWithdrawn {
            account: seller,
            amount: position.amount,
            yield_paid,
        });
        Ok((position.amount, yield_paid))
    }

    /// Slashes the full active stake. With a beneficiary the stake moves to
    /// that account, otherwise it is burned.
    pub fn slash_stake(
        &mut self,
        caller: Caller,
        seller: AccountId,
        beneficiary: Option<AccountId>,
    ) -> LedgerResult<Amount> {
        if caller != Caller::Arbitration {
            return Err(LedgerError::UnauthorizedCaller(caller));
        }
        if let Some(b) = beneficiary {
            self.account(b)?;
        }
        let account = self.account_mut(seller)?;
        let stake = account
            .stake
            .as_mut()
            .filter(|s| s.is_active())
            .ok_or(LedgerError::NoActiveStake(seller))?;
        let amount = stake.amount;
        stake.status = StakeStatus::Slashed;
        stake.amount = 0;
        match beneficiary {
            Some(b) => self.credit(b, TokenKind::Lzs, amount)?,
            None => self.supply[TokenKind::Lzs.index()].burned += amount,
        }
        self.journal.push(LedgerEvent::StakeSlashed {
            account: seller,
            amount,
            beneficiary,
        });
        Ok(amount)
    }

    /// Moves up to `amount` LZS out of an active stake to `to`; returns the
    /// amount moved.
    pub fn debit_stake(
        &mut self,
        caller: Caller,
        seller: AccountId,
        to: AccountId,
        amount: Amount,
    ) -> LedgerResult<Amount> {
        if !matches!(caller, Caller::Exchange | Caller::Arbitration) {
            return Err(LedgerError::UnauthorizedCaller(caller));
        }
        self.account(to)?;
        let account = self.account_mut(seller)?;
        let Some(stake) = account.stake.as_mut().filter(|s| s.is_active()) else {
            return Ok(0);
        };
        let moved = amount.min(stake.amount);
        if moved == 0 {
            return Ok(0);
        }
        stake.amount -= moved;
        self.credit(to, TokenKind::Lzs, moved)?;
        self.journal.push(LedgerEvent::StakeDebited {
            account: seller,
            to,
            amount: moved,
        });
        Ok(moved)
    }

    pub fn lock_escrow(
        &mut self,
        session: SessionId,
        buyer: AccountId,
        amount: Amount,
        token: TokenKind,
    ) -> LedgerResult<&EscrowAccount> {
        if !token.is_payment_token() {
            return Err(LedgerError::UnsupportedToken(token));
        }
        if self.escrows.contains_key(&session) {
            return Err(LedgerError::DuplicateEscrow(session));
        }
        if amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        self.debit(buyer, token, amount)?;
        self.escrows.insert(
            session,
            EscrowAccount {
                session,
                payer: buyer,
                amount,
                token,
                status: EscrowStatus::Locked,
            },
        );
        self.journal.push(LedgerEvent::EscrowLocked {
            session,
            payer: buyer,
            token,
            amount,
        });
        Ok(&self.escrows[&session])
    }

    /// Releases a locked escrow. The seller share is delivered in the seller's
    /// preferred payment token, converted at `rate`; the buyer share is
    /// refunded in the escrow token.
    pub fn settle_escrow(
        &mut self,
        caller: Caller,
        session: SessionId,
        disposition: Disposition,
        seller: AccountId,
        rate: Rate,
    ) -> LedgerResult<Receipt> {
        if !matches!(caller, Caller::Exchange | Caller::Arbitration) {
            return Err(LedgerError::UnauthorizedCaller(caller));
        }
        let escrow = self
            .escrows
            .get(&session)
            .ok_or(LedgerError::NoEscrow(session))?
            .clone();
        if escrow.status != EscrowStatus::Locked {
            return Err(LedgerError::AlreadySettled(session));
        }
        let seller_pref = self.account(seller)?.payout_preference;
        let (seller_amount, status) = match disposition {
            Disposition::ToSeller => (escrow.amount, EscrowStatus::ReleasedToSeller),
            Disposition::ToBuyer => (0, EscrowStatus::RefundedToBuyer),
            Disposition::Split { seller_ppm } => (
                apply_ppm(escrow.amount, seller_ppm.min(PPM as Ppm)),
                EscrowStatus::SlashedSplit,
            ),
        };
        let buyer_amount = escrow.amount - seller_amount;

        if let Some(e) = self.escrows.get_mut(&session) {
            e.status = status;
        }
        self.journal.push(LedgerEvent::EscrowSettled {
            session,
            disposition,
            status,
            seller,
            seller_amount,
            buyer_amount,
        });
        if buyer_amount > 0 {
            self.credit(escrow.payer, escrow.token, buyer_amount)?;
        }
        if seller_amount > 0 {
            self.credit(seller, escrow.token, seller_amount)?;
            if let Some(pref) = seller_pref.filter(|p| *p != escrow.token) {
                self.convert(seller, escrow.token, seller_amount, rate)?;
                debug_assert!(pref.is_payment_token());
            }
        }
        Ok(Receipt {
            from: escrow.payer,
            to: if seller_amount > 0 { seller } else { escrow.payer },
            amount: escrow.amount,
            token: escrow.token,
        })
    }

    pub fn court_stake_deposit(&mut self, juror: AccountId, amount: Amount) -> LedgerResult<()> {
        if amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        self.debit(juror, TokenKind::Lzs, amount)?;
        *self.court_stakes.entry(juror).or_insert(0) += amount;
        self.journal.push(LedgerEvent::CourtStakeDeposited {
            account: juror,
            amount,
        });
        Ok(())
    }

    /// Moves a fraction of a juror's court stake into a case fee pool.
    pub fn court_stake_slash(
        &mut self,
        caller: Caller,
        juror: AccountId,
        case: CaseId,
        ppm: Ppm,
    ) -> LedgerResult<Amount> {
        if caller != Caller::Arbitration {
            return Err(LedgerError::UnauthorizedCaller(caller));
        }
        let stake = self.court_stakes.get(&juror).copied().unwrap_or(0);
        let amount = apply_ppm(stake, ppm);
        if amount == 0 {
            return Ok(0);
        }
        self.court_stakes.insert(juror, stake - amount);
        *self.pools.entry(case).or_insert(0) += amount;
        self.journal.push(LedgerEvent::CourtStakeSlashed {
            account: juror,
            case,
            amount,
        });
        Ok(amount)
    }

    pub fn pool_deposit(&mut self, case: CaseId, from: AccountId, amount: Amount) -> LedgerResult<()> {
        if amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        self.debit(from, TokenKind::Lzs, amount)?;
        *self.pools.entry(case).or_insert(0) += amount;
        self.journal.push(LedgerEvent::PoolDeposit { case, from, amount });
        Ok(())
    }

    pub fn pool_payout(
        &mut self,
        caller: Caller,
        case: CaseId,
        to: AccountId,
        amount: Amount,
    ) -> LedgerResult<()> {
        if caller != Caller::Arbitration {
            return Err(LedgerError::UnauthorizedCaller(caller));
        }
        if amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        self.account(to)?;
        let pool = self.pool(case);
        if pool < amount {
            return Err(LedgerError::PoolShortfall(case, pool, amount));
        }
        self.pools.insert(case, pool - amount);
        self.credit(to, TokenKind::Lzs, amount)?;
        self.journal.push(LedgerEvent::PoolPayout { case, to, amount });
        Ok(())
    }

    /// Locks the whole spendable LZSP balance for delegation.
    pub fn governance_lock_all(&mut self, id: AccountId) -> LedgerResult<Amount> {
        let amount = self.balance(id, TokenKind::Lzsp);
        if amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        self.debit(id, TokenKind::Lzsp, amount)?;
        *self.governance_locks.entry(id).or_insert(0) += amount;
        self.journal
            .push(LedgerEvent::GovernanceLocked { account: id, amount });
        Ok(amount)
    }

    pub fn governance_unlock_all(&mut self, id: AccountId) -> LedgerResult<Amount> {
        let amount = self.governance_locks.remove(&id).unwrap_or(0);
        if amount == 0 {
            return Err(LedgerError::NoGovernanceLock {
                account: id,
                token: TokenKind::Lzsp,
            });
        }
        self.credit(id, TokenKind::Lzsp, amount)?;
        self.journal
            .push(LedgerEvent::GovernanceUnlocked { account: id, amount });
        Ok(amount)
    }

    pub fn require_balance(&self, id: AccountId, token: TokenKind, amount: Amount) -> LedgerResult<()> {
        self.require_funds(id, token, amount)
    }

    pub fn conservation_report(&self) -> ConservationReport {
        let mut tokens = BTreeMap::new();
        for token in TokenKind::ALL {
            let counters = self.supply[token.index()];
            let mut line = SupplyLine {
                initial: counters.initial,
                minted: counters.minted,
                burned: counters.burned,
                ..SupplyLine::default()
            };
            for account in self.accounts.values() {
                line.balances += account.balances.get(token);
                if token == TokenKind::Lzs {
                    if let Some(stake) = &account.stake {
                        if stake.status != StakeStatus::Slashed {
                            line.staked += stake.amount;
                        }
                    }
                }
            }
            line.escrow = self
                .escrows
                .values()
                .filter(|e| e.token == token && e.status == EscrowStatus::Locked)
                .map(|e| e.amount)
                .sum();
            match token {
                TokenKind::Lzs => {
                    line.staked += self.court_stakes.values().sum::<Amount>();
                    line.pooled = self.pools.values().sum();
                }
                TokenKind::Lzsp => {
                    line.staked += self.governance_locks.values().sum::<Amount>();
                }
                TokenKind::Lzdc => {}
            }
            tokens.insert(token, line);
        }
        ConservationReport { tokens }
    }
}

/// Converts between the two payment tokens with floor rounding.
pub fn convert_amount(from: TokenKind, amount: Amount, rate: Rate) -> Amount {
    match from {
        TokenKind::Lzs => rate.lzs_to_lzdc(amount),
        TokenKind::Lzdc => rate.lzdc_to_lzs(amount),
        TokenKind::Lzsp => 0,
    }
}

/// USD cents for an amount of a payment token. LZDC is pegged 1:1 to USD;
/// LZS is valued through the LZS/LZDC rate.
pub fn usd_cents(amount: Amount, token: TokenKind, rate: Rate) -> u64 {
    let lzdc = match token {
        TokenKind::Lzdc => amount,
        TokenKind::Lzs => rate.lzs_to_lzdc(amount),
        TokenKind::Lzsp => 0,
    };
    lzdc / 10_000
}
