//! Behavior library and built-in federations.
//!
//! Reaction bodies are named behaviors interpreted by the runtime. Replicated
//! state lives in a [`Replica`] that combines updates with a [`MergeOp`].

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timekit::{Interval, Tag, Timestamp};

mod builtin;

pub use builtin::*;

/// Behavior identifiers understood by the runtime.
pub mod behavior {
    /// Record a write for each stimulus, merge it locally and send it on every effect.
    pub const SUBMIT: &str = "submit";
    /// Like `submit`, but a zero amount is a balance query and produces no write.
    pub const PUBLISH: &str = "publish";
    /// Merge every present network update into the replica, in bank order.
    pub const MERGE: &str = "merge";
    /// Record a user read of the local replica.
    pub const QUERY: &str = "query";
    /// Send the replica state and its provenance on every effect.
    pub const RESPOND: &str = "respond";
    /// Record a user read of a received response.
    pub const DISPLAY: &str = "display";
    /// Forward trigger payloads to every effect.
    pub const RELAY: &str = "relay";
    pub const NOOP: &str = "noop";
    /// Deadline handler that records the miss.
    pub const APOLOGIZE: &str = "apologize";

    /// Tardy-input handler that merges the late update at the current tag.
    pub const APPLY: &str = "apply";
    /// Tardy-input handler that discards the late update.
    pub const REJECT: &str = "reject";

    pub const REACTIONS: [&str; 9] = [SUBMIT, PUBLISH, MERGE, QUERY, RESPOND, DISPLAY, RELAY, NOOP, APOLOGIZE];
    pub const FAULT_HANDLERS: [&str; 2] = [APPLY, REJECT];
}

/// A stimulus or update value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Datum {
    Int(i64),
    Text(String),
}

impl fmt::Display for Datum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Datum::Int(v) => write!(f, "{v}"),
            Datum::Text(s) => f.write_str(s),
        }
    }
}

impl From<i64> for Datum {
    fn from(v: i64) -> Self {
        Datum::Int(v)
    }
}

impl From<&str> for Datum {
    fn from(v: &str) -> Self {
        Datum::Text(v.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeOp {
    Add,
    Replace,
    Append,
    SortedAppend,
    SortedReplace,
}

impl fmt::Display for MergeOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergeOp::Add => "add",
            MergeOp::Replace => "replace",
            MergeOp::Append => "append",
            MergeOp::SortedAppend => "sorted_append",
            MergeOp::SortedReplace => "sorted_replace",
        })
    }
}

/// One replicated write as it travels between federates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Update {
    pub write: String,
    pub value: Datum,
    /// Tag at which the write happened on its origin federate.
    pub origin: Tag,
    /// Priority of the origin among simultaneous writes.
    pub bank: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeOutcome {
    Applied,
    /// Already merged under the same write id.
    Duplicate,
    /// Superseded by a stored write that ranks higher.
    Superseded,
    /// Refused by the overdraft policy.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MergeError {
    #[error("add merge needs an integer value, got {0:?}")]
    NotInteger(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    key: (Tag, u32, String),
    value: Datum,
}

/// Replicated state combined under one merge operation.
///
/// Every write id is merged at most once. `Replace` ranks writes by the tag at
/// which they are merged and then by bank, so a simultaneous write from a
/// lower bank never overwrites one from a higher bank. Remaining ties go to
/// the larger write id. The sorted variants
/// rank by the write's origin tag instead, which makes them insensitive to
/// arrival order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replica {
    op: MergeOp,
    allow_overdraft: bool,
    total: i64,
    value: Option<Datum>,
    last: Option<(Tag, u32, String)>,
    entries: Vec<Entry>,
    seen: BTreeSet<String>,
}

impl Replica {
    pub fn new(op: MergeOp) -> Self {
        Replica { op, allow_overdraft: true, total: 0, value: None, last: None, entries: Vec::new(), seen: BTreeSet::new() }
    }

    pub fn with_overdraft(mut self, allow: bool) -> Self {
        self.allow_overdraft = allow;
        self
    }

    pub fn op(&self) -> MergeOp {
        self.op
    }

    /// Merges `u` while processing tag `at`.
    pub fn merge(&mut self, u: &Update, at: Tag) -> Result<MergeOutcome, MergeError> {
        if self.seen.contains(&u.write) {
            return Ok(MergeOutcome::Duplicate);
        }
        let outcome = match self.op {
            MergeOp::Add => {
                let Datum::Int(v) = u.value else {
                    return Err(MergeError::NotInteger(u.value.to_string()));
                };
                let next = self.total.saturating_add(v);
                if next < 0 && !self.allow_overdraft {
                    MergeOutcome::Rejected
                } else {
                    self.total = next;
                    MergeOutcome::Applied
                }
            }
            MergeOp::Replace | MergeOp::SortedReplace => {
                let rank = if self.op == MergeOp::Replace { at } else { u.origin };
                let key = (rank, u.bank, u.write.clone());
                if self.last.as_ref().is_none_or(|l| key >= *l) {
                    self.last = Some(key);
                    self.value = Some(u.value.clone());
                    MergeOutcome::Applied
                } else {
                    MergeOutcome::Superseded
                }
            }
            MergeOp::Append => {
                self.entries.push(Entry { key: (at, u.bank, u.write.clone()), value: u.value.clone() });
                MergeOutcome::Applied
            }
            MergeOp::SortedAppend => {
                let key = (u.origin, u.bank, u.write.clone());
                let pos = self.entries.partition_point(|e| e.key < key);
                self.entries.insert(pos, Entry { key, value: u.value.clone() });
                MergeOutcome::Applied
            }
        };
        self.seen.insert(u.write.clone());
        Ok(outcome)
    }

    pub fn state(&self) -> String {
        match self.op {
            MergeOp::Add => self.total.to_string(),
            MergeOp::Replace | MergeOp::SortedReplace => self.value.as_ref().map_or_else(|| "none".into(), Datum::to_string),
            MergeOp::Append | MergeOp::SortedAppend => {
                self.entries.iter().map(|e| e.value.to_string()).collect::<Vec<_>>().join(",")
            }
        }
    }

    pub fn balance(&self) -> i64 {
        self.total
    }

    /// Ids of every write merged so far.
    pub fn provenance(&self) -> Vec<String> {
        self.seen.iter().cloned().collect()
    }
}

/// Reconstructs a write's origin timestamp from the receive tag and the
/// logical delay of the path it took.
pub fn reconstruct_origin(received: Tag, delay: Interval) -> Timestamp {
    received.time().checked_add(-delay).unwrap_or(Timestamp::NEG_INF)
}
