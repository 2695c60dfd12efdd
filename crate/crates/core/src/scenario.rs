//! Scenario files: agents, strategies, a market generator and a day-stamped
//! script of external events. JSON, strict schema.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::ValueModel;
use crate::config::EngineConfig;
use crate::engine::Command;
use crate::ledger::{AccountRole, TokenKind};
use crate::types::{Amount, Day};

/// Placeholder nonce in scripted scans; the harness substitutes the code
/// issued for the session.
pub const ISSUED_NONCE: &str = "@issued";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SellerCheat {
    NoShip,
    WrongItem,
    QrOmit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuyerCheat {
    FalseClaim,
    NeverConfirm,
}

/// Agent behaviour. Each variant is a fixed decision table over session
/// states; `Mixed` picks honest or dishonest per session.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Strategy {
    #[default]
    Honest,
    DishonestSeller {
        cheat: SellerCheat,
    },
    DishonestBuyer {
        cheat: BuyerCheat,
    },
    /// Honest with probability `p_honest`; otherwise a seller skips shipping
    /// and a buyer files a false claim.
    Mixed {
        p_honest: f64,
    },
    /// Never acts; scripts drive the account.
    Passive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub label: String,
    pub role: AccountRole,
    /// Genesis balances in micro-units.
    #[serde(default)]
    pub balances: BTreeMap<TokenKind, Amount>,
    /// Seller deposit made on day 0.
    #[serde(default)]
    pub stake: Option<Amount>,
    /// Court stake that makes the account eligible as a juror.
    #[serde(default)]
    pub court_stake: Option<Amount>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub founder: bool,
    /// Number of identical agents; labels get a `-k` suffix when above 1.
    #[serde(default = "one")]
    pub count: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriceModel {
    Fixed { amount: Amount },
    Uniform { min: Amount, max: Amount },
    /// USD values drawn from a distribution, priced at the current rate.
    Usd { model: ValueModel },
}

/// Generated exchanges: seller `k mod S` lists and buyer `k mod B` buys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketPlan {
    pub exchanges: u32,
    #[serde(default = "one_day")]
    pub start_day: Day,
    #[serde(default = "one")]
    pub per_day: u32,
    pub price: PriceModel,
    #[serde(default = "lzs")]
    pub token: TokenKind,
    #[serde(default = "general")]
    pub category: String,
}

fn one_day() -> Day {
    1
}

fn lzs() -> TokenKind {
    TokenKind::Lzs
}

fn general() -> String {
    "general".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    pub day: Day,
    #[serde(rename = "do")]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub horizon: Day,
    #[serde(default)]
    pub config: EngineConfig,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub market: Option<MarketPlan>,
    /// Days from drop-off until the simulated carrier reports delivery.
    /// `None` leaves deliveries to the script.
    #[serde(default)]
    pub carrier_days: Option<Day>,
    #[serde(default)]
    pub script: Vec<ScriptStep>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario does not parse: {0}")]
    ParseError(String),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    ValidationError(Vec<String>),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::ParseError(e.to_string()))?;
        let errors = s.validate();
        if errors.is_empty() {
            Ok(s)
        } else {
            Err(ScenarioError::ValidationError(errors))
        }
    }

    /// Agents after `count` expansion, in account-id order.
    pub fn expanded_agents(&self) -> Vec<AgentSpec> {
        let mut out = Vec::new();
        for a in &self.agents {
            for k in 0..a.count {
                let mut one = a.clone();
                one.count = 1;
                if a.count > 1 {
                    one.label = format!("{}-{k}", a.label);
                }
                out.push(one);
            }
        }
        out
    }

    /// Every violation, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errors: Vec<String> = self.config.validate().iter().map(|v| v.to_string()).collect();
        if self.horizon == 0 {
            errors.push("horizon: must be at least 1 day".into());
        }
        let agents = self.expanded_agents();
        let mut labels = BTreeSet::new();
        for a in &agents {
            if !labels.insert(a.label.as_str()) {
                errors.push(format!("agents: duplicate label {:?}", a.label));
            }
            if let Strategy::Mixed { p_honest } = a.strategy {
                if !(0.0..=1.0).contains(&p_honest) {
                    errors.push(format!("agents.{}: p_honest {p_honest} outside [0, 1]", a.label));
                }
            }
            if a.balances.contains_key(&TokenKind::Lzsp) {
                errors.push(format!("agents.{}: LZSP cannot be granted at genesis", a.label));
            }
            if a.stake.is_some() && a.role != AccountRole::Seller {
                errors.push(format!("agents.{}: only sellers stake a deposit", a.label));
            }
        }
        for a in &self.agents {
            if a.count == 0 {
                errors.push(format!("agents.{}: count must be positive", a.label));
            }
        }
        if let Some(m) = &self.market {
            let has = |role| agents.iter().any(|a| a.role == role);
            if m.exchanges > 0 && !(has(AccountRole::Seller) && has(AccountRole::Buyer)) {
                errors.push("market: needs at least one seller and one buyer agent".into());
            }
            if m.per_day == 0 {
                errors.push("market.per_day: must be positive".into());
            }
            if !m.token.is_payment_token() {
                errors.push(format!("market.token: {} is not a payment token", m.token));
            }
            match &m.price {
                PriceModel::Fixed { amount } if *amount == 0 => errors.push("market.price: amount must be positive".into()),
                PriceModel::Uniform { min, max } if min > max || *min == 0 => {
                    errors.push("market.price: need 0 < min <= max".into())
                }
                PriceModel::Usd { model } => {
                    if let Err(e) = model.check() {
                        errors.push(format!("market.price: {e}"));
                    }
                }
                _ => {}
            }
        }
        for (i, step) in self.script.iter().enumerate() {
            if step.day > self.horizon {
                errors.push(format!("script[{i}]: day {} is past the horizon {}", step.day, self.horizon));
            }
        }
        errors
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"name":"m","seed":1,"horizon":5}"#;

    #[test]
    fn minimal_loads() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.config, EngineConfig::default());
        assert!(s.agents.is_empty());
    }

    #[test]
    fn unknown_field_rejected() {
        let err = Scenario::from_json(r#"{"name":"m","seed":1,"horizon":5,"colour":1}"#).unwrap_err();
        assert!(matches!(err, ScenarioError::ParseError(_)));
        let err = Scenario::from_json(r#"{"name":"m","seed":1,"horizon":5,"config":{"deadlines":{"zz":1}}}"#)
            .unwrap_err();
        assert!(matches!(err, ScenarioError::ParseError(_)));
    }

    #[test]
    fn deadline_constraint_named() {
        let text = r#"{"name":"m","seed":1,"horizon":5,"config":{"deadlines":{"b":4,"b_prime":4}}}"#;
        let ScenarioError::ValidationError(errs) = Scenario::from_json(text).unwrap_err() else {
            panic!("expected validation error");
        };
        assert!(errs.iter().any(|e| e.contains("T1 + B > T1' + B'")), "{errs:?}");
    }

    #[test]
    fn all_violations_listed() {
        let text = r#"{"name":"m","seed":1,"horizon":0,
            "config":{"deadlines":{"b":2,"b_prime":3}},
            "agents":[{"label":"x","role":"buyer","strategy":{"kind":"mixed","p_honest":2.0}},
                      {"label":"x","role":"buyer"}]}"#;
        let ScenarioError::ValidationError(errs) = Scenario::from_json(text).unwrap_err() else {
            panic!("expected validation error");
        };
        assert_eq!(errs.len(), 4, "{errs:?}");
    }

    #[test]
    fn count_expands_labels() {
        let text = r#"{"name":"m","seed":1,"horizon":5,
            "agents":[{"label":"s","role":"seller","count":3}]}"#;
        let s = Scenario::from_json(text).unwrap();
        let labels: Vec<_> = s.expanded_agents().into_iter().map(|a| a.label).collect();
        assert_eq!(labels, ["s-0", "s-1", "s-2"]);
    }

    #[test]
    fn script_steps_parse() {
        let text = r#"{"name":"m","seed":1,"horizon":5,
            "script":[{"day":1,"do":{"cmd":"deliver","session":0}},
                      {"day":2,"do":{"cmd":"confirm_receipt","buyer":0,"session":0,
                                     "via":{"kind":"scan","nonce":"@issued"}}}]}"#;
        let s = Scenario::from_json(text).unwrap();
        assert_eq!(s.script.len(), 2);
    }
}
