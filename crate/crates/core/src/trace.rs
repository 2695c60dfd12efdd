//! JSON-lines trace with a hash-chained digest per entry.
//!
//! Line 1 is the header. Every following line is one [`TraceEntry`] in
//! canonical JSON (sorted keys, no whitespace). The digest of entry `k` is
//! `sha256(prev ‖ canonical(entry k without digest))` where `prev` is the
//! digest of entry `k-1`, or the header hash for entry 0.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::engine::Record;
use crate::hash::{canonical_json, sha256_hex, HASH_NAME};
use crate::types::Day;

pub const TRACE_FORMAT: &str = "market-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    /// Hash function used for the digest chain and vote commitments.
    pub hash: String,
    pub seed: u64,
    pub scenario: String,
    pub config: EngineConfig,
}

impl TraceHeader {
    pub fn new(scenario: impl Into<String>, seed: u64, config: EngineConfig) -> Self {
        TraceHeader {
            format: TRACE_FORMAT.to_string(),
            version: TRACE_VERSION,
            hash: HASH_NAME.to_string(),
            seed,
            scenario: scenario.into(),
            config,
        }
    }

    pub fn digest(&self) -> String {
        sha256_hex(&[canonical_json(self).expect("header serializes").as_bytes()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub seq: u64,
    pub day: Day,
    pub module: String,
    pub kind: String,
    pub payload: Value,
    pub digest: String,
}

#[derive(Serialize)]
struct Unsealed<'a> {
    seq: u64,
    day: Day,
    module: &'a str,
    kind: &'a str,
    payload: &'a Value,
}

fn seal(prev: &str, seq: u64, day: Day, module: &str, kind: &str, payload: &Value) -> String {
    let body = canonical_json(&Unsealed {
        seq,
        day,
        module,
        kind,
        payload,
    })
    .expect("entry serializes");
    sha256_hex(&[prev.as_bytes(), body.as_bytes()])
}

impl TraceEntry {
    /// The record this entry was built from.
    pub fn record(&self) -> Record {
        let mut event = match &self.payload {
            Value::Object(m) => m.clone(),
            _ => Map::new(),
        };
        event.insert("type".into(), Value::String(self.kind.clone()));
        Record {
            day: self.day,
            module: self.module.clone(),
            event: Value::Object(event),
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("trace tampered at sequence number {seq}")]
    TamperedTrace { seq: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Trace {
            header,
            entries: Vec::new(),
        }
    }

    pub fn last_digest(&self) -> String {
        self.entries
            .last()
            .map(|e| e.digest.clone())
            .unwrap_or_else(|| self.header.digest())
    }

    pub fn push(&mut self, record: Record) {
        let seq = self.entries.len() as u64;
        let (kind, payload) = split_record(record.event);
        let digest = seal(&self.last_digest(), seq, record.day, &record.module, &kind, &payload);
        self.entries.push(TraceEntry {
            seq,
            day: record.day,
            module: record.module,
            kind,
            payload,
            digest,
        });
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = Record>) {
        for r in records {
            self.push(r);
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = canonical_json(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&canonical_json(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }

    pub fn read(path: &Path) -> Result<Trace, TraceError> {
        let text = std::fs::read_to_string(path)?;
        Trace::parse(&text)
    }

    /// Parses and checks the digest chain. Any line that fails to parse, is
    /// not in canonical form, or breaks the chain is reported by its
    /// sequence number.
    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let mut lines = text.split_inclusive('\n');
        let first = lines.next().ok_or(TraceError::Empty)?;
        let head_line = first.strip_suffix('\n').ok_or_else(|| TraceError::BadHeader("unterminated".into()))?;
        let header: TraceHeader =
            serde_json::from_str(head_line).map_err(|e| TraceError::BadHeader(e.to_string()))?;
        if canonical_json(&header).ok().as_deref() != Some(head_line) {
            return Err(TraceError::BadHeader("not in canonical form".into()));
        }
        if header.format != TRACE_FORMAT || header.version != TRACE_VERSION {
            return Err(TraceError::BadHeader(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        if header.hash != HASH_NAME {
            return Err(TraceError::BadHeader(format!("unsupported hash {}", header.hash)));
        }
        let mut prev = header.digest();
        let mut entries = Vec::new();
        for (seq, raw) in lines.enumerate() {
            let seq = seq as u64;
            let tampered = || TraceError::TamperedTrace { seq };
            let line = raw.strip_suffix('\n').ok_or_else(tampered)?;
            let entry: TraceEntry = serde_json::from_str(line).map_err(|_| tampered())?;
            if entry.seq != seq || canonical_json(&entry).ok().as_deref() != Some(line) {
                return Err(tampered());
            }
            let expect = seal(&prev, seq, entry.day, &entry.module, &entry.kind, &entry.payload);
            if expect != entry.digest {
                return Err(tampered());
            }
            prev = entry.digest.clone();
            entries.push(entry);
        }
        Ok(Trace { header, entries })
    }

    pub fn entries_of<'a>(&'a self, module: &'a str) -> impl Iterator<Item = &'a TraceEntry> + 'a {
        self.entries.iter().filter(move |e| e.module == module)
    }
}

fn split_record(event: Value) -> (String, Value) {
    match event {
        Value::Object(mut m) => {
            let kind = match m.remove("type") {
                Some(Value::String(s)) => s,
                _ => "event".to_string(),
            };
            (kind, Value::Object(m))
        }
        other => ("event".to_string(), other),
    }
}
