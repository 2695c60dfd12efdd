//! Offline summaries computed from a trace alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::arbitration::{ArbitrationEvent, Tier};
use crate::exchange::{ExchangeEvent, Rule};
use crate::governance::{GovernanceEvent, ProposalLevel, ProposalState};
use crate::ledger::{usd_cents, LedgerEvent, TokenKind};
use crate::sim::outcome_label;
use crate::trace::Trace;
use crate::types::{Amount, CaseId, Day, ProposalId, UsdCents};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub scenario: String,
    pub seed: u64,
    pub entries: usize,
    pub last_day: Day,
    pub sessions: usize,
    pub exchanges_by_outcome: BTreeMap<String, u64>,
    /// Transitions per protocol rule label.
    pub rule_coverage: BTreeMap<String, u64>,
    /// Protocol rules never seen in the trace.
    pub rules_missing: Vec<String>,
    pub disputes_by_tier: BTreeMap<String, u64>,
    pub disputes_by_ruling: BTreeMap<String, u64>,
    pub lzsp_minted: Amount,
    pub rejected_commands: u64,
}

fn ev<T: serde::de::DeserializeOwned>(e: &crate::trace::TraceEntry) -> Option<T> {
    serde_json::from_value(e.record().event).ok()
}

fn tier_name(t: Tier) -> &'static str {
    match t {
        Tier::Internal => "internal",
        Tier::External => "external",
    }
}

pub fn trace_report(trace: &Trace) -> TraceReport {
    let mut r = TraceReport {
        scenario: trace.header.scenario.clone(),
        seed: trace.header.seed,
        entries: trace.entries.len(),
        last_day: trace.entries.last().map(|e| e.day).unwrap_or(0),
        sessions: 0,
        exchanges_by_outcome: BTreeMap::new(),
        rule_coverage: BTreeMap::new(),
        rules_missing: Vec::new(),
        disputes_by_tier: BTreeMap::new(),
        disputes_by_ruling: BTreeMap::new(),
        lzsp_minted: 0,
        rejected_commands: 0,
    };
    for e in &trace.entries {
        match e.module.as_str() {
            "exchange" => match ev::<ExchangeEvent>(e) {
                Some(ExchangeEvent::Transition { rule, from, .. }) => {
                    if rule == Rule::Purchase && from == crate::exchange::ExchangeState::Listed {
                        r.sessions += 1;
                    }
                    *r.rule_coverage.entry(rule.label().to_string()).or_insert(0) += 1;
                }
                Some(ExchangeEvent::Listed { rule, .. }) => {
                    *r.rule_coverage.entry(rule.label().to_string()).or_insert(0) += 1;
                }
                Some(ExchangeEvent::ReturnRequested { rule, .. }) if rule == Rule::C5 => {
                    *r.rule_coverage.entry(rule.label().to_string()).or_insert(0) += 1;
                }
                Some(ExchangeEvent::Terminal { outcome, .. }) => {
                    *r.exchanges_by_outcome.entry(outcome_label(outcome.kind)).or_insert(0) += 1;
                }
                _ => {}
            },
            "arbitration" => match ev::<ArbitrationEvent>(e) {
                Some(ArbitrationEvent::CaseOpened { tier, .. }) => {
                    *r.disputes_by_tier.entry(tier_name(tier).into()).or_insert(0) += 1;
                }
                Some(ArbitrationEvent::RulingFinal { ruling, .. }) => {
                    let key = serde_json::to_value(ruling).ok().and_then(|v| v.as_str().map(String::from));
                    *r.disputes_by_ruling.entry(key.unwrap_or_default()).or_insert(0) += 1;
                }
                _ => {}
            },
            "ledger" => {
                if let Some(LedgerEvent::Mint {
                    token: TokenKind::Lzsp,
                    amount,
                    ..
                }) = ev::<LedgerEvent>(e)
                {
                    r.lzsp_minted += amount;
                }
            }
            "engine" if e.kind == "rejected" => r.rejected_commands += 1,
            _ => {}
        }
    }
    r.rules_missing = Rule::PROTOCOL
        .iter()
        .map(|rule| rule.label().to_string())
        .filter(|l| !r.rule_coverage.contains_key(l))
        .collect();
    r
}

impl TraceReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} (seed {}), {} entries, last day {}", self.scenario, self.seed, self.entries, self.last_day);
        let _ = writeln!(s, "sessions {}, LZSP minted {}, rejected commands {}", self.sessions, self.lzsp_minted, self.rejected_commands);
        let _ = writeln!(s, "\noutcome                        count");
        for (k, v) in &self.exchanges_by_outcome {
            let _ = writeln!(s, "{k:<30} {v:>5}");
        }
        let _ = writeln!(s, "\ndisputes by tier: {:?}", self.disputes_by_tier);
        let _ = writeln!(s, "disputes by ruling: {:?}", self.disputes_by_ruling);
        let _ = writeln!(s, "\nrule      transitions");
        for rule in Rule::PROTOCOL {
            let n = self.rule_coverage.get(rule.label()).copied().unwrap_or(0);
            let _ = writeln!(s, "{:<9} {n:>11}", rule.label());
        }
        s
    }
}

/// One proposal's lifecycle as seen in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalLifecycle {
    pub proposal: ProposalId,
    pub level: Option<ProposalLevel>,
    pub created: Option<Day>,
    pub closes_at: Option<Day>,
    pub votes: usize,
    pub up: Amount,
    pub down: Amount,
    pub states: Vec<(Day, ProposalState)>,
    pub final_state: Option<ProposalState>,
}

pub fn governance_report(trace: &Trace) -> Vec<ProposalLifecycle> {
    let mut out: BTreeMap<ProposalId, ProposalLifecycle> = BTreeMap::new();
    let blank = |id| ProposalLifecycle {
        proposal: id,
        level: None,
        created: None,
        closes_at: None,
        votes: 0,
        up: 0,
        down: 0,
        states: Vec::new(),
        final_state: None,
    };
    for e in trace.entries_of("governance") {
        match ev::<GovernanceEvent>(e) {
            Some(GovernanceEvent::ProposalCreated {
                proposal,
                level,
                closes_at,
                ..
            }) => {
                let p = out.entry(proposal).or_insert_with(|| blank(proposal));
                p.level = Some(level);
                p.created = Some(e.day);
                p.closes_at = Some(closes_at);
            }
            Some(GovernanceEvent::ProposalState { proposal, state }) => {
                let p = out.entry(proposal).or_insert_with(|| blank(proposal));
                p.states.push((e.day, state));
                p.final_state = Some(state);
            }
            Some(GovernanceEvent::Voted { proposal, .. }) => {
                out.entry(proposal).or_insert_with(|| blank(proposal)).votes += 1;
            }
            Some(GovernanceEvent::Finalized { proposal, up, down, .. }) => {
                let p = out.entry(proposal).or_insert_with(|| blank(proposal));
                p.up = up;
                p.down = down;
            }
            _ => {}
        }
    }
    out.into_values().collect()
}

pub fn governance_text(rows: &[ProposalLifecycle]) -> String {
    let mut s = String::from("id   level        created closes votes  final      path\n");
    for p in rows {
        let path: Vec<String> = p
            .states
            .iter()
            .map(|(d, st)| format!("{}@{d}", state_name(*st)))
            .collect();
        let level = p.level.map(|l| match l {
            ProposalLevel::LowMedium => "low-medium",
            ProposalLevel::High => "high",
        });
        let _ = writeln!(
            s,
            "{:<4} {:<12} {:>7} {:>6} {:>5}  {:<10} {}",
            p.proposal.0,
            level.unwrap_or("?"),
            p.created.map(|d| d.to_string()).unwrap_or_default(),
            p.closes_at.map(|d| d.to_string()).unwrap_or_default(),
            p.votes,
            p.final_state.map(state_name).unwrap_or("-"),
            path.join(" > ")
        );
    }
    s
}

fn state_name(s: ProposalState) -> &'static str {
    match s {
        ProposalState::Created => "created",
        ProposalState::Active => "active",
        ProposalState::Approved => "approved",
        ProposalState::Vetoed => "vetoed",
        ProposalState::Queued => "queued",
        ProposalState::Executed => "executed",
        ProposalState::Rejected => "rejected",
        ProposalState::Failed => "failed",
    }
}

/// Every arbitration event of one case, plus the escrow and stake effects
/// of its ruling, as a standalone document.
pub fn case_transcript(trace: &Trace, case: CaseId) -> Option<Value> {
    let mut session = None;
    let mut events = Vec::new();
    for e in trace.entries_of("arbitration") {
        let id = e.payload.get("case").and_then(Value::as_u64);
        if id != Some(case.0) {
            continue;
        }
        if e.kind == "case_opened" {
            session = e.payload.get("session").cloned();
        }
        events.push(json!({"seq": e.seq, "day": e.day, "kind": e.kind, "payload": e.payload}));
    }
    if events.is_empty() {
        return None;
    }
    let pool: Vec<Value> = trace
        .entries_of("ledger")
        .filter(|e| e.payload.get("case").and_then(Value::as_u64) == Some(case.0))
        .map(|e| json!({"seq": e.seq, "day": e.day, "kind": e.kind, "payload": e.payload}))
        .collect();
    Some(json!({
        "case": case.0,
        "session": session,
        "hash": trace.header.hash,
        "events": events,
        "ledger": pool,
    }))
}

/// Values and routing of every dispute in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Routing {
    pub threshold_usd_cents: UsdCents,
    pub values_usd_cents: Vec<UsdCents>,
    pub internal: usize,
    pub external: usize,
}

pub fn dispute_routing(trace: &Trace) -> Routing {
    let mut r = Routing {
        threshold_usd_cents: trace.header.config.arbitration.internal_threshold_usd_cents,
        values_usd_cents: Vec::new(),
        internal: 0,
        external: 0,
    };
    for e in trace.entries_of("arbitration") {
        if let Some(ArbitrationEvent::CaseOpened {
            tier, value_usd_cents, ..
        }) = ev::<ArbitrationEvent>(e)
        {
            r.values_usd_cents.push(value_usd_cents);
            match tier {
                Tier::Internal => r.internal += 1,
                Tier::External => r.external += 1,
            }
        }
    }
    r
}

/// USD value of every listing in the trace, at the rate in force that day.
pub fn listing_values_usd(trace: &Trace) -> Vec<f64> {
    let cfg = &trace.header.config.ledger;
    trace
        .entries_of("exchange")
        .filter_map(|e| match ev::<ExchangeEvent>(e) {
            Some(ExchangeEvent::Listed { price, token, .. }) => {
                Some(usd_cents(price, token, cfg.rate_at(e.day)) as f64 / 100.0)
            }
            _ => None,
        })
        .collect()
}
