//! Protocol engine for an escrowed peer-to-peer marketplace: token ledger,
//! exchange state machine, reputation, incentives, two-tier arbitration and
//! DAO governance, plus a deterministic day-stepped simulator whose runs are
//! recorded as hash-chained JSON-lines traces.

pub mod analytics;
pub mod arbitration;
pub mod config;
pub mod engine;
pub mod exchange;
pub mod governance;
pub mod hash;
pub mod incentives;
pub mod ledger;
pub mod report;
pub mod reputation;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod types;
pub mod verify;

pub use config::EngineConfig;
pub use engine::{Command, Engine, EngineError};
pub use ledger::{Ledger, TokenKind};
pub use scenario::{load_scenario, Scenario, ScenarioError};
pub use sim::{run, RunSummary};
pub use trace::Trace;
pub use types::{AccountId, Amount, CaseId, Day, ListingId, ProposalId, SessionId};
