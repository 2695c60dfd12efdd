//! Engine configuration. Every protocol constant the exchange flow leaves open
//! lives here with its default; scenarios override any subset of fields.

use serde::{Deserialize, Serialize};

use crate::types::{tokens, Amount, Day, Ppm, Rate, UsdCents};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub ledger: LedgerConfig,
    pub deadlines: DeadlineConfig,
    pub market: MarketConfig,
    pub reputation: ReputationConfig,
    pub rewards: RewardSchedule,
    pub arbitration: ArbitrationConfig,
    pub governance: GovernanceConfig,
}

/// Where a slashed seller stake goes when the seller loses a dispute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlashTarget {
    /// Stake moves to the winning buyer.
    Buyer,
    /// Stake leaves the supply.
    Burn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    pub min_seller_stake: Amount,
    pub stake_duration_days: Day,
    /// Yield paid in LZS on withdrawal, as a fraction of the stake.
    pub stake_yield_ppm: Ppm,
    /// LZS/LZDC conversion rate before any scheduled change.
    pub conversion_rate: Rate,
    /// Scheduled rate changes, effective from the given day.
    pub rate_schedule: Vec<RatePoint>,
    pub slash_target: SlashTarget,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig {
            min_seller_stake: tokens(500),
            stake_duration_days: 90,
            stake_yield_ppm: 0,
            conversion_rate: Rate::PARITY,
            rate_schedule: Vec::new(),
            slash_target: SlashTarget::Buyer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatePoint {
    pub from_day: Day,
    pub rate: Rate,
}

impl LedgerConfig {
    /// Rate in force on `day`.
    pub fn rate_at(&self, day: Day) -> Rate {
        self.rate_schedule
            .iter()
            .filter(|p| p.from_day <= day)
            .max_by_key(|p| p.from_day)
            .map(|p| p.rate)
            .unwrap_or(self.conversion_rate)
    }
}

/// Exchange windows, in days, measured from the anchors recorded on each session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeadlineConfig {
    /// Drop-off window from T0 (escrow funded).
    pub a: Day,
    /// Buyer confirmation window from T1 (drop-off).
    pub b: Day,
    /// Seller QR answer window from T1' (buyer QR query).
    pub b_prime: Day,
    /// Satisfaction answer window from T2 (receipt confirmed).
    pub c: Day,
    /// Mutual resolution window from T3 (unsatisfied answer).
    pub d: Day,
    /// Pre-settlement return window from T1.
    pub e: Day,
    /// Post-settlement return window from T1.
    pub f: Day,
    /// Window for each pre-escrow step (validate, agree, fund).
    pub pre_escrow: Day,
    /// Time the seller has to confirm a returned package.
    pub return_window: Day,
}

impl Default for DeadlineConfig {
    fn default() -> Self {
        DeadlineConfig {
            a: 5,
            b: 10,
            b_prime: 3,
            c: 7,
            d: 7,
            e: 14,
            f: 30,
            pre_escrow: 3,
            return_window: 21,
        }
    }
}

impl DeadlineConfig {
    /// Sum of the protocol windows; the no-livelock bound adds 5 to this.
    pub fn protocol_span(&self) -> Day {
        self.a + self.b + self.b_prime + self.c + self.d + self.e + self.f
    }

    pub fn validate(&self, errors: &mut Vec<ConfigViolation>) {
        let windows = [
            ("deadlines.a", self.a),
            ("deadlines.b", self.b),
            ("deadlines.b_prime", self.b_prime),
            ("deadlines.c", self.c),
            ("deadlines.d", self.d),
            ("deadlines.e", self.e),
            ("deadlines.f", self.f),
            ("deadlines.pre_escrow", self.pre_escrow),
            ("deadlines.return_window", self.return_window),
        ];
        for (field, value) in windows {
            if value < 1 {
                errors.push(ConfigViolation::new(field, "window must be at least 1 day"));
            }
        }
        // The earliest possible T1' is T1 itself, so T1 + B > T1' + B' for
        // every session requires B > B'.
        if self.b <= self.b_prime {
            errors.push(ConfigViolation::new(
                "deadlines.b_prime",
                format!(
                    "constraint T1 + B > T1' + B' violated: B = {} must exceed B' = {}",
                    self.b, self.b_prime
                ),
            ));
        }
        if self.pre_escrow > self.protocol_span() || self.return_window > self.protocol_span() {
            errors.push(ConfigViolation::new(
                "deadlines.return_window",
                "pre-escrow and return windows may not exceed A+B+B'+C+D+E+F",
            ));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    /// Minimum USD-equivalent listing price.
    pub listing_floor_usd_cents: UsdCents,
    /// Accepted listing categories. Empty accepts every category.
    pub categories: Vec<String>,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            listing_floor_usd_cents: 2_000,
            categories: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReputationConfig {
    pub initial: u32,
    pub good_delta: u32,
    pub bad_delta: u32,
    /// Seller penalty when the QR request goes unanswered.
    pub qr_penalty: u32,
    /// Seller penalty on mutual resolution.
    pub resolution_penalty: u32,
    /// Penalty applied to the losing party of a dispute.
    pub arbitration_penalty: u32,
}

impl Default for ReputationConfig {
    fn default() -> Self {
        ReputationConfig {
            initial: 50,
            good_delta: 2,
            bad_delta: 5,
            qr_penalty: 5,
            resolution_penalty: 5,
            arbitration_penalty: 5,
        }
    }
}

/// LZSP amounts minted for honest behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSchedule {
    /// Buyer reward for an on-time scan followed by a satisfied answer.
    pub y: Amount,
    /// Reward for each party on mutual resolution.
    pub z: Amount,
    /// Seller reward for a completed exchange with the QR code included.
    pub seller_exchange_reward: Amount,
    /// Buyer grant when the seller left the QR code out of the package.
    pub default_grant: Amount,
}

impl Default for RewardSchedule {
    fn default() -> Self {
        RewardSchedule {
            y: tokens(10),
            z: tokens(5),
            seller_exchange_reward: tokens(5),
            default_grant: tokens(10),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    ForRespondent,
    ForClaimant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArbitrationConfig {
    /// Disputes at or below this value are handled internally.
    pub internal_threshold_usd_cents: UsdCents,
    pub evidence_period: Day,
    /// Days the claimant has to pay the external court fee.
    pub fee_window: Day,
    pub base_jurors: u32,
    pub commit_period: Day,
    pub reveal_period: Day,
    pub appeal_window: Day,
    /// LZS fee per juror seat.
    pub fee_per_juror: Amount,
    /// Share of court stake slashed from jurors that fail to reveal.
    pub non_reveal_penalty_ppm: Ppm,
    pub tie_rule: TieRule,
    /// Loser reimburses the winner's paid court fees before payouts.
    pub refund_winner_fees: bool,
    pub court: String,
    /// Internal-tier decision table, one row per flag combination.
    pub internal_rules: Vec<crate::arbitration::InternalRuleRow>,
}

impl Default for ArbitrationConfig {
    fn default() -> Self {
        ArbitrationConfig {
            internal_threshold_usd_cents: 5_000,
            evidence_period: 5,
            fee_window: 3,
            base_jurors: 3,
            commit_period: 3,
            reveal_period: 2,
            appeal_window: 3,
            fee_per_juror: tokens(1),
            non_reveal_penalty_ppm: 300_000,
            tie_rule: TieRule::ForRespondent,
            refund_winner_fees: true,
            court: "Blockchain > Technical".to_string(),
            internal_rules: crate::arbitration::default_internal_rules(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum QuorumRule {
    /// Fraction of circulating LZSP.
    FractionOfSupply(Ppm),
    Absolute(Amount),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GovernanceConfig {
    pub low_medium_period: Day,
    pub high_period: Day,
    pub veto_window: Day,
    pub vote_cap: Amount,
    pub quorum: QuorumRule,
    pub proposal_fee: Amount,
    pub membership_lzsp: Amount,
    pub membership_reputation: u32,
    pub committee_quorum_ppm: Ppm,
    pub committee_agreement_ppm: Ppm,
    /// When true, exactly-at-threshold agreement passes.
    pub committee_agreement_inclusive: bool,
    pub committee_term_days: Day,
    /// Fee fraction lost on a first miscategorization.
    pub miscategorization_fee_ppm: Ppm,
    /// Blacklist length for repeat offenses; `None` is permanent.
    pub blacklist_days: Vec<Option<Day>>,
}

impl Default for GovernanceConfig {
    fn default() -> Self {
        GovernanceConfig {
            low_medium_period: 7,
            high_period: 30,
            veto_window: 3,
            vote_cap: tokens(1_000),
            quorum: QuorumRule::FractionOfSupply(100_000),
            proposal_fee: tokens(10),
            membership_lzsp: tokens(100),
            membership_reputation: 40,
            committee_quorum_ppm: 800_000,
            committee_agreement_ppm: 500_000,
            committee_agreement_inclusive: true,
            committee_term_days: 3 * 365,
            miscategorization_fee_ppm: 500_000,
            blacklist_days: vec![Some(7), Some(30), None],
        }
    }
}

/// One failed configuration check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigViolation {
    pub field: String,
    pub message: String,
}

impl ConfigViolation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigViolation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl EngineConfig {
    /// Collects every violated bound.
    pub fn validate(&self) -> Vec<ConfigViolation> {
        let mut errors = Vec::new();
        self.deadlines.validate(&mut errors);

        if !self.ledger.conversion_rate.is_valid() {
            errors.push(ConfigViolation::new(
                "ledger.conversion_rate",
                "rate must be positive",
            ));
        }
        for (i, point) in self.ledger.rate_schedule.iter().enumerate() {
            if !point.rate.is_valid() {
                errors.push(ConfigViolation::new(
                    format!("ledger.rate_schedule[{i}]"),
                    "rate must be positive",
                ));
            }
        }
        if self.ledger.min_seller_stake == 0 {
            errors.push(ConfigViolation::new(
                "ledger.min_seller_stake",
                "must be positive",
            ));
        }
        if self.ledger.stake_duration_days == 0 {
            errors.push(ConfigViolation::new(
                "ledger.stake_duration_days",
                "must be at least 1 day",
            ));
        }
        let rep = &self.reputation;
        if rep.initial > 100 {
            errors.push(ConfigViolation::new(
                "reputation.initial",
                "must lie in [0, 100]",
            ));
        }
        let arb = &self.arbitration;
        if arb.base_jurors == 0 {
            errors.push(ConfigViolation::new(
                "arbitration.base_jurors",
                "must be at least 1",
            ));
        }
        for (field, value) in [
            ("arbitration.evidence_period", arb.evidence_period),
            ("arbitration.fee_window", arb.fee_window),
            ("arbitration.commit_period", arb.commit_period),
            ("arbitration.reveal_period", arb.reveal_period),
            ("arbitration.appeal_window", arb.appeal_window),
        ] {
            if value == 0 {
                errors.push(ConfigViolation::new(field, "must be at least 1 day"));
            }
        }
        if arb.non_reveal_penalty_ppm as u64 > crate::types::PPM {
            errors.push(ConfigViolation::new(
                "arbitration.non_reveal_penalty_ppm",
                "must not exceed 1_000_000",
            ));
        }
        if let Err(message) = crate::arbitration::check_rule_table(&arb.internal_rules) {
            errors.push(ConfigViolation::new("arbitration.internal_rules", message));
        }
        let gov = &self.governance;
        for (field, value) in [
            ("governance.low_medium_period", gov.low_medium_period),
            ("governance.high_period", gov.high_period),
            ("governance.veto_window", gov.veto_window),
            ("governance.committee_term_days", gov.committee_term_days),
        ] {
            if value == 0 {
                errors.push(ConfigViolation::new(field, "must be at least 1 day"));
            }
        }
        if gov.vote_cap == 0 {
            errors.push(ConfigViolation::new("governance.vote_cap", "must be positive"));
        }
        for (field, value) in [
            ("governance.committee_quorum_ppm", gov.committee_quorum_ppm),
            ("governance.committee_agreement_ppm", gov.committee_agreement_ppm),
            ("governance.miscategorization_fee_ppm", gov.miscategorization_fee_ppm),
        ] {
            if value as u64 > crate::types::PPM {
                errors.push(ConfigViolation::new(field, "must not exceed 1_000_000"));
            }
        }
        if let QuorumRule::FractionOfSupply(ppm) = gov.quorum {
            if ppm as u64 > crate::types::PPM {
                errors.push(ConfigViolation::new(
                    "governance.quorum",
                    "fraction must not exceed 1_000_000",
                ));
            }
        }
        if gov.membership_reputation > 100 {
            errors.push(ConfigViolation::new(
                "governance.membership_reputation",
                "must lie in [0, 100]",
            ));
        }
        errors
    }
}
