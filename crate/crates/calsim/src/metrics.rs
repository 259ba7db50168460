//! Execution traces and the quantities computed from them.
//!
//! A trace is a list of [`TraceRecord`]s in simulation order. The text form is
//! one tab-separated record per line after a `#` header naming the nodes:
//!
//! ```text
//! # calsim trace v1
//! # node 0 a federate
//! # node 1 b federate
//! # id	kind	node	port	tag	vt	clock	value	link	write	origin	state	provenance
//! 0	write	b	-	(1000000000, 0)	1000000000	1000000000	100	-	b#1	-	100	b#1
//! ```
//!
//! Absent optional fields are written as `-`. Tabs, newlines, backslashes and
//! a literal `-` inside a value are escaped with a backslash.
#![allow(clippy::tabs_in_doc_comments)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::maxplus::MaxPlusMatrix;
use crate::timekit::{Interval, Tag, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Write,
    Read,
    Send,
    Receive,
    Tardy,
    DeadlineMiss,
    CtrlSend,
    CtrlRecv,
}

impl RecordKind {
    pub const ALL: [RecordKind; 8] = [
        RecordKind::Write,
        RecordKind::Read,
        RecordKind::Send,
        RecordKind::Receive,
        RecordKind::Tardy,
        RecordKind::DeadlineMiss,
        RecordKind::CtrlSend,
        RecordKind::CtrlRecv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Write => "write",
            RecordKind::Read => "read",
            RecordKind::Send => "send",
            RecordKind::Receive => "receive",
            RecordKind::Tardy => "tardy",
            RecordKind::DeadlineMiss => "deadline_miss",
            RecordKind::CtrlSend => "ctrl_send",
            RecordKind::CtrlRecv => "ctrl_recv",
        }
    }

    /// Coordination traffic rather than program events.
    pub fn is_ctrl(self) -> bool {
        matches!(self, RecordKind::CtrlSend | RecordKind::CtrlRecv)
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecordKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        RecordKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown record kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Federate,
    Rti,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeInfo {
    pub name: String,
    pub role: NodeRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub id: u64,
    pub kind: RecordKind,
    pub node: usize,
    pub port: Option<String>,
    pub tag: Tag,
    pub vt: Timestamp,
    pub clock: Timestamp,
    pub value: Option<String>,
    /// For receives and tardy records, the id of the originating send.
    pub link: Option<u64>,
    /// Write id created or carried by this event.
    pub write: Option<String>,
    /// Tag the message carried on the wire, when the receiver processed it at another tag.
    pub origin: Option<Tag>,
    /// Replica state after the event.
    pub state: Option<String>,
    /// Write ids reflected in `state` (or in the carried value).
    pub provenance: Vec<String>,
}

impl TraceRecord {
    pub fn new(kind: RecordKind, node: usize, tag: Tag, vt: Timestamp, clock: Timestamp) -> Self {
        TraceRecord {
            id: 0,
            kind,
            node,
            port: None,
            tag,
            vt,
            clock,
            value: None,
            link: None,
            write: None,
            origin: None,
            state: None,
            provenance: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Trace {
    pub nodes: Vec<NodeInfo>,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invariant violated at record {position}: {message}")]
pub struct InvariantViolation {
    pub position: usize,
    pub message: String,
}

const HEADER: &str = "# calsim trace v1";
const COLUMNS: &str = "# id\tkind\tnode\tport\ttag\tvt\tclock\tvalue\tlink\twrite\torigin\tstate\tprovenance";

pub fn escape_field(s: &str) -> String {
    if s == "-" {
        return "\\-".into();
    }
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> Result<String, String> {
    if s == "\\-" {
        return Ok("-".into());
    }
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            other => return Err(format!("bad escape \\{}", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), |x| escape_field(&x.to_string()))
}

impl Trace {
    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn federates(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].role == NodeRole::Federate).collect()
    }

    /// Records that describe program events, excluding coordination traffic.
    pub fn events(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| !r.kind.is_ctrl())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for (i, n) in self.nodes.iter().enumerate() {
            let role = match n.role {
                NodeRole::Federate => "federate",
                NodeRole::Rti => "rti",
            };
            out.push_str(&format!("# node {i} {} {role}\n", n.name));
        }
        out.push_str(COLUMNS);
        out.push('\n');
        for r in &self.records {
            let prov = if r.provenance.is_empty() {
                "-".to_string()
            } else {
                r.provenance.iter().map(|p| escape_field(p)).collect::<Vec<_>>().join(",")
            };
            let cols = [
                r.id.to_string(),
                r.kind.to_string(),
                self.nodes[r.node].name.clone(),
                opt(&r.port),
                r.tag.to_string(),
                r.vt.to_string(),
                r.clock.to_string(),
                opt(&r.value),
                opt(&r.link),
                opt(&r.write),
                opt(&r.origin),
                opt(&r.state),
                prov,
            ];
            out.push_str(&cols.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Trace, TraceParseError> {
        let mut trace = Trace::default();
        let mut names: HashMap<String, usize> = HashMap::new();
        let mut saw_header = false;
        for (k, line) in text.lines().enumerate() {
            let lineno = k + 1;
            let err = |m: String| TraceParseError { line: lineno, message: m };
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if line == HEADER {
                    saw_header = true;
                } else if let Some(node) = rest.strip_prefix("node ") {
                    let parts: Vec<&str> = node.split_whitespace().collect();
                    let [idx, name, role] = parts[..] else {
                        return Err(err(format!("malformed node line {line:?}")));
                    };
                    let idx: usize = idx.parse().map_err(|_| err(format!("bad node index {idx:?}")))?;
                    if idx != trace.nodes.len() {
                        return Err(err(format!("node index {idx} out of order")));
                    }
                    let role = match role {
                        "federate" => NodeRole::Federate,
                        "rti" => NodeRole::Rti,
                        _ => return Err(err(format!("unknown node role {role:?}"))),
                    };
                    names.insert(name.to_string(), idx);
                    trace.nodes.push(NodeInfo { name: name.to_string(), role });
                }
                continue;
            }
            if !saw_header {
                return Err(err("missing trace header".into()));
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 13 {
                return Err(err(format!("expected 13 fields, found {}", cols.len())));
            }
            let field = |c: &str| -> Result<Option<String>, TraceParseError> {
                if c == "-" {
                    Ok(None)
                } else {
                    unescape_field(c).map(Some).map_err(err)
                }
            };
            let parse_tag = |c: &str| Tag::from_str(c).map_err(|e| err(e.to_string()));
            let parse_ts = |c: &str| Timestamp::from_str(c).map_err(|e| err(e.to_string()));
            let id = cols[0].parse::<u64>().map_err(|_| err(format!("bad id {:?}", cols[0])))?;
            let kind = RecordKind::from_str(cols[1]).map_err(err)?;
            let node = *names.get(cols[2]).ok_or_else(|| err(format!("unknown node {:?}", cols[2])))?;
            let link = match field(cols[8])? {
                None => None,
                Some(s) => Some(s.parse::<u64>().map_err(|_| err(format!("bad link {s:?}")))?),
            };
            let origin = match field(cols[10])? {
                None => None,
                Some(s) => Some(parse_tag(&s)?),
            };
            let provenance = if cols[12] == "-" {
                Vec::new()
            } else {
                cols[12].split(',').map(|p| unescape_field(p).map_err(err)).collect::<Result<_, _>>()?
            };
            trace.records.push(TraceRecord {
                id,
                kind,
                node,
                port: field(cols[3])?,
                tag: parse_tag(cols[4])?,
                vt: parse_ts(cols[5])?,
                clock: parse_ts(cols[6])?,
                value: field(cols[7])?,
                link,
                write: field(cols[9])?,
                origin,
                state: field(cols[11])?,
                provenance,
            });
        }
        if !saw_header {
            return Err(TraceParseError { line: 1, message: "missing trace header".into() });
        }
        Ok(trace)
    }

    /// Checks per-node ordering and the send/receive antecedent rules.
    ///
    /// Per node, tags and local clock readings must not decrease. A send that
    /// reports a write must follow that write on the same node with a tag at
    /// least as large; a receive must reference an earlier send, and on a
    /// logical channel its tag must be at least the send's tag.
    pub fn validate(&self) -> Result<(), InvariantViolation> {
        let fail = |position: usize, message: String| Err(InvariantViolation { position, message });
        let mut last: HashMap<usize, (Tag, Timestamp)> = HashMap::new();
        let mut writes: HashMap<(usize, &str), Tag> = HashMap::new();
        let mut sends: HashMap<u64, &TraceRecord> = HashMap::new();
        let mut prev_id: Option<u64> = None;
        for (pos, r) in self.records.iter().enumerate() {
            if r.node >= self.nodes.len() {
                return fail(pos, format!("unknown node index {}", r.node));
            }
            if prev_id.is_some_and(|p| r.id <= p) {
                return fail(pos, "record ids must increase".into());
            }
            prev_id = Some(r.id);
            if r.kind.is_ctrl() {
                continue;
            }
            if let Some((tag, clock)) = last.get(&r.node) {
                if r.tag < *tag {
                    return fail(pos, format!("tag {} precedes earlier tag {} on {}", r.tag, tag, self.nodes[r.node].name));
                }
                if r.clock < *clock {
                    return fail(pos, format!("physical time {} precedes {} on {}", r.clock, clock, self.nodes[r.node].name));
                }
            }
            last.insert(r.node, (r.tag, r.clock));
            match r.kind {
                RecordKind::Write => {
                    if let Some(w) = &r.write {
                        writes.insert((r.node, w.as_str()), r.tag);
                    }
                }
                RecordKind::Send => {
                    if let Some(w) = &r.write {
                        match writes.get(&(r.node, w.as_str())) {
                            Some(t) if *t <= r.tag => {}
                            Some(t) => return fail(pos, format!("send tag {} precedes write {w} at {t}", r.tag)),
                            None => {
                                // Forwarded writes were received rather than written here.
                            }
                        }
                    }
                    sends.insert(r.id, r);
                }
                RecordKind::Receive => {
                    let Some(link) = r.link else {
                        return fail(pos, "receive without originating send".into());
                    };
                    let Some(send) = sends.get(&link) else {
                        return fail(pos, format!("receive references unknown send {link}"));
                    };
                    if send.write != r.write {
                        return fail(pos, format!("receive carries {:?} but send {link} carried {:?}", r.write, send.write));
                    }
                    // Retagged receives (physical channels, tardy repairs) carry the wire tag in `origin`.
                    if r.origin.is_none() && r.tag < send.tag {
                        return fail(pos, format!("receive tag {} precedes send tag {}", r.tag, send.tag));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn write_records(trace: &Trace, node: usize) -> impl Iterator<Item = &TraceRecord> {
    trace.records.iter().filter(move |r| r.node == node && r.kind == RecordKind::Write && r.write.is_some())
}

/// First receive on `node` of each write id.
fn first_receives(trace: &Trace, node: usize) -> HashMap<&str, &TraceRecord> {
    let mut out: HashMap<&str, &TraceRecord> = HashMap::new();
    for r in trace.records.iter().filter(|r| r.node == node && r.kind == RecordKind::Receive) {
        if let Some(w) = &r.write {
            out.entry(w.as_str()).or_insert(r);
        }
    }
    out
}

fn gap(later: Timestamp, earlier: Timestamp) -> Interval {
    later.since(earlier).unwrap_or(Interval::INF)
}

/// Largest timestamp gap between a write on `j` and its receipt on `i`;
/// `inf` when some write never arrives, zero when `j` never writes.
pub fn inconsistency(trace: &Trace, i: usize, j: usize) -> Interval {
    if i == j {
        return Interval::ZERO;
    }
    let recv = first_receives(trace, i);
    write_records(trace, j)
        .map(|w| match recv.get(w.write.as_deref().unwrap_or_default()) {
            Some(r) => gap(r.tag.time(), w.tag.time()),
            None => Interval::INF,
        })
        .fold(Interval::ZERO, Interval::max)
}

/// Largest lag between a user read's tag timestamp and the clock at which it ran.
pub fn unavailability(trace: &Trace, i: usize) -> Interval {
    trace
        .records
        .iter()
        .filter(|r| r.node == i && r.kind == RecordKind::Read)
        .map(|r| gap(r.clock, r.tag.time()))
        .fold(Interval::ZERO, Interval::max)
}

/// Largest lag between an externally triggered write's tag timestamp and its processing.
pub fn processing_offset(trace: &Trace, i: usize) -> Interval {
    write_records(trace, i).map(|r| gap(r.clock, r.tag.time())).fold(Interval::ZERO, Interval::max)
}

/// Largest lag from a write's tag timestamp on `j` to its receipt on `i`'s clock.
/// May be negative when `i`'s clock runs behind.
pub fn apparent_latency(trace: &Trace, i: usize, j: usize) -> Interval {
    let recv = first_receives(trace, i);
    let mut worst: Option<Interval> = None;
    for w in write_records(trace, j) {
        let v = if i == j {
            gap(w.clock, w.tag.time())
        } else {
            match recv.get(w.write.as_deref().unwrap_or_default()) {
                Some(r) => gap(r.clock, w.tag.time()),
                None => Interval::INF,
            }
        };
        worst = Some(worst.map_or(v, |x| x.max(v)));
    }
    worst.unwrap_or(Interval::ZERO)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetricsReport {
    pub nodes: Vec<String>,
    pub inconsistency: MaxPlusMatrix,
    pub apparent_latency: MaxPlusMatrix,
    pub unavailability: Vec<Interval>,
    pub processing_offsets: Vec<Interval>,
}

/// All four quantities over the federate nodes of `trace`.
pub fn analyze(trace: &Trace) -> MetricsReport {
    let feds = trace.federates();
    let n = feds.len();
    MetricsReport {
        nodes: feds.iter().map(|&f| trace.nodes[f].name.clone()).collect(),
        inconsistency: MaxPlusMatrix::from_fn(n, |i, j| inconsistency(trace, feds[i], feds[j])),
        apparent_latency: MaxPlusMatrix::from_fn(n, |i, j| apparent_latency(trace, feds[i], feds[j])),
        unavailability: feds.iter().map(|&f| unavailability(trace, f)).collect(),
        processing_offsets: feds.iter().map(|&f| processing_offset(trace, f)).collect(),
    }
}

fn render_matrix(out: &mut String, title: &str, names: &[String], m: &MaxPlusMatrix) {
    out.push_str(&format!("{title}\n{:<12}", ""));
    for n in names {
        out.push_str(&format!("{n:>12}"));
    }
    out.push('\n');
    for (i, n) in names.iter().enumerate() {
        out.push_str(&format!("{n:<12}"));
        for j in 0..names.len() {
            out.push_str(&format!("{:>12}", m.get(i, j).to_string()));
        }
        out.push('\n');
    }
}

impl MetricsReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        render_matrix(&mut out, "inconsistency C[i][j] (write on j, receipt on i)", &self.nodes, &self.inconsistency);
        render_matrix(&mut out, "apparent latency L[i][j]", &self.nodes, &self.apparent_latency);
        out.push_str(&format!("{:<12}{:>16}{:>16}\n", "node", "unavailability", "offset"));
        for (k, n) in self.nodes.iter().enumerate() {
            out.push_str(&format!(
                "{n:<12}{:>16}{:>16}\n",
                self.unavailability[k].to_string(),
                self.processing_offsets[k].to_string()
            ));
        }
        let finite: Vec<i64> = self.unavailability.iter().filter(|v| v.is_finite()).map(|v| v.as_ns()).collect();
        if !finite.is_empty() {
            let mean = finite.iter().map(|&v| v as i128).sum::<i128>() / finite.len() as i128;
            out.push_str(&format!("mean finite unavailability {}\n", Interval::from_ns(mean as i64)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CausalOutcome {
    Pass,
    /// `present` is reflected in read `read` but its cause `missing` is not.
    Violation { missing: String, present: String, read: u64 },
}

/// Checks that every read reflects a causally closed set of writes.
///
/// Happened-before is process order plus send-to-receive; each write's causal
/// past is tracked as the set of writes known to its node when it occurred.
pub fn check_causal_consistency(trace: &Trace) -> CausalOutcome {
    let mut known: HashMap<usize, BTreeSet<String>> = HashMap::new();
    let mut past: HashMap<String, BTreeSet<String>> = HashMap::new();
    let mut order: HashMap<String, usize> = HashMap::new();
    let mut at_send: HashMap<u64, BTreeSet<String>> = HashMap::new();
    for r in trace.events() {
        let k = known.entry(r.node).or_default();
        match r.kind {
            RecordKind::Write => {
                if let Some(w) = &r.write {
                    past.insert(w.clone(), k.clone());
                    let next = order.len();
                    order.entry(w.clone()).or_insert(next);
                    k.insert(w.clone());
                }
            }
            RecordKind::Send => {
                at_send.insert(r.id, k.clone());
            }
            RecordKind::Receive | RecordKind::Tardy => {
                if let Some(s) = r.link.and_then(|l| at_send.get(&l)) {
                    k.extend(s.iter().cloned());
                }
                k.extend(r.provenance.iter().cloned());
            }
            RecordKind::Read => {
                let present: BTreeSet<&str> = r.provenance.iter().map(String::as_str).collect();
                let mut reflected: Vec<&String> = r.provenance.iter().filter(|w| past.contains_key(*w)).collect();
                reflected.sort_by_key(|w| order[*w]);
                for w in reflected {
                    let mut causes: Vec<&String> = past[w].iter().collect();
                    causes.sort_by_key(|c| order.get(*c).copied().unwrap_or(usize::MAX));
                    if let Some(m) = causes.into_iter().find(|c| !present.contains(c.as_str())) {
                        return CausalOutcome::Violation { missing: m.clone(), present: w.clone(), read: r.id };
                    }
                }
            }
            _ => {}
        }
    }
    CausalOutcome::Pass
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum EventualOutcome {
    Converged { state: String },
    Diverged { states: BTreeMap<String, String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("write {write} at virtual time {vt} follows the quiescence point")]
    NotQuiescent { write: String, vt: Timestamp },
}

/// Compares the final replica state of every node that carries one.
pub fn check_eventual_consistency(trace: &Trace, quiescence: Timestamp) -> Result<EventualOutcome, MetricsError> {
    if let Some(w) = trace.events().find(|r| r.kind == RecordKind::Write && r.vt > quiescence) {
        return Err(MetricsError::NotQuiescent { write: w.write.clone().unwrap_or_default(), vt: w.vt });
    }
    let mut finals: BTreeMap<String, String> = BTreeMap::new();
    for r in trace.events() {
        if let (Some(s), RecordKind::Write | RecordKind::Receive | RecordKind::Read) = (&r.state, r.kind) {
            finals.insert(trace.nodes[r.node].name.clone(), s.clone());
        }
    }
    let distinct: BTreeSet<&String> = finals.values().collect();
    Ok(match distinct.len() {
        0 => EventualOutcome::Converged { state: "-".into() },
        1 => EventualOutcome::Converged { state: distinct.into_iter().next().cloned().unwrap_or_default() },
        _ => EventualOutcome::Diverged { states: finals },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    /// `node/kind/port` sequence where the traces first differ.
    pub key: String,
    pub index: usize,
    pub tag: Tag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum LogicalComparison {
    Equal,
    FirstDivergence(Divergence),
}

type Sequences = BTreeMap<String, Vec<(Tag, Option<String>)>>;

fn logical_sequences(t: &Trace) -> Sequences {
    let mut out: Sequences = BTreeMap::new();
    for r in t.events() {
        if !matches!(r.kind, RecordKind::Write | RecordKind::Read | RecordKind::Send | RecordKind::Receive) {
            continue;
        }
        let key = format!("{}/{}/{}", t.nodes[r.node].name, r.kind, r.port.as_deref().unwrap_or("-"));
        let value = match r.kind {
            RecordKind::Read => r.state.clone().or_else(|| r.value.clone()),
            _ => r.value.clone(),
        };
        out.entry(key).or_default().push((r.tag, value));
    }
    out
}

/// Compares per-port `(tag, value)` sequences, ignoring physical and virtual times.
///
/// When several sequences differ, the reported divergence is the one at the
/// smallest tag, where the tag of a differing pair is the smaller of the two.
pub fn compare_logical_traces(a: &Trace, b: &Trace) -> LogicalComparison {
    let (sa, sb) = (logical_sequences(a), logical_sequences(b));
    let keys: BTreeSet<&String> = sa.keys().chain(sb.keys()).collect();
    let empty = Vec::new();
    let mut best: Option<Divergence> = None;
    for key in keys {
        let (xa, xb) = (sa.get(key).unwrap_or(&empty), sb.get(key).unwrap_or(&empty));
        let Some(index) = (0..xa.len().max(xb.len())).find(|&k| xa.get(k) != xb.get(k)) else {
            continue;
        };
        let tag = match (xa.get(index), xb.get(index)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) | (None, Some(p)) => p.0,
            (None, None) => unreachable!("index lies within the longer sequence"),
        };
        if best.as_ref().is_none_or(|d| tag < d.tag) {
            best = Some(Divergence { key: key.clone(), index, tag });
        }
    }
    best.map_or(LogicalComparison::Equal, LogicalComparison::FirstDivergence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ms(v: i64) -> Timestamp {
        Timestamp::from_ms(v)
    }

    fn tag(v: i64) -> Tag {
        Tag::at(ms(v))
    }

    struct Builder {
        trace: Trace,
    }

    impl Builder {
        fn new(names: &[&str]) -> Self {
            Builder {
                trace: Trace {
                    nodes: names.iter().map(|n| NodeInfo { name: n.to_string(), role: NodeRole::Federate }).collect(),
                    records: Vec::new(),
                },
            }
        }

        fn push(&mut self, mut r: TraceRecord) -> u64 {
            r.id = self.trace.records.len() as u64;
            let id = r.id;
            self.trace.records.push(r);
            id
        }

        fn write(&mut self, node: usize, w: &str, t: i64, clock: i64) -> u64 {
            let mut r = TraceRecord::new(RecordKind::Write, node, tag(t), ms(clock), ms(clock));
            r.write = Some(w.into());
            r.value = Some(w.into());
            self.push(r)
        }

        fn send(&mut self, node: usize, w: &str, t: i64, clock: i64) -> u64 {
            let mut r = TraceRecord::new(RecordKind::Send, node, tag(t), ms(clock), ms(clock));
            r.write = Some(w.into());
            r.value = Some(w.into());
            r.port = Some("x.in".into());
            self.push(r)
        }

        fn receive(&mut self, node: usize, w: &str, link: u64, t: i64, clock: i64, prov: &[&str]) -> u64 {
            let mut r = TraceRecord::new(RecordKind::Receive, node, tag(t), ms(clock), ms(clock));
            r.write = Some(w.into());
            r.value = Some(w.into());
            r.link = Some(link);
            r.port = Some("x.in".into());
            r.provenance = prov.iter().map(|s| s.to_string()).collect();
            r.state = Some(prov.join(","));
            self.push(r)
        }

        fn read(&mut self, node: usize, t: i64, clock: i64, prov: &[&str]) -> u64 {
            let mut r = TraceRecord::new(RecordKind::Read, node, tag(t), ms(clock), ms(clock));
            r.provenance = prov.iter().map(|s| s.to_string()).collect();
            r.state = Some(prov.join(","));
            self.push(r)
        }
    }

    #[test]
    fn inconsistency_of_delayed_receive() {
        let mut b = Builder::new(&["i", "j"]);
        b.write(1, "w", 10, 10);
        let s = b.send(1, "w", 10, 10);
        b.receive(0, "w", s, 110, 110, &["w"]);
        assert_eq!(inconsistency(&b.trace, 0, 1), Interval::from_ms(100));
        assert_eq!(inconsistency(&b.trace, 1, 0), Interval::ZERO);
    }

    #[test]
    fn lost_write_means_infinite_inconsistency() {
        let mut b = Builder::new(&["i", "j"]);
        b.write(1, "w", 10, 10);
        assert_eq!(inconsistency(&b.trace, 0, 1), Interval::INF);
        assert_eq!(apparent_latency(&b.trace, 0, 1), Interval::INF);
    }

    #[test]
    fn unavailability_and_offsets() {
        let mut b = Builder::new(&["i"]);
        b.read(0, 100, 150, &[]);
        assert_eq!(unavailability(&b.trace, 0), Interval::from_ms(50));
        assert_eq!(processing_offset(&b.trace, 0), Interval::ZERO);
        b.write(0, "w", 200, 205);
        assert_eq!(processing_offset(&b.trace, 0), Interval::from_ms(5));
        assert_eq!(apparent_latency(&b.trace, 0, 0), Interval::from_ms(5));
        let empty = Builder::new(&["i"]).trace;
        assert_eq!(unavailability(&empty, 0), Interval::ZERO);
    }

    #[test]
    fn apparent_latency_can_be_negative() {
        let mut b = Builder::new(&["i", "j"]);
        b.write(1, "w", 100, 100);
        let s = b.send(1, "w", 100, 100);
        b.receive(0, "w", s, 100, 70, &["w"]);
        assert_eq!(apparent_latency(&b.trace, 0, 1), Interval::from_ms(-30));
        assert_eq!(apparent_latency(&Builder::new(&["i", "j"]).trace, 0, 1), Interval::ZERO);
    }

    fn observer_trace(w3_first: bool) -> Trace {
        let mut b = Builder::new(&["joe", "sally", "obs"]);
        b.write(0, "w1", 100, 100);
        let s1 = b.send(0, "w1", 100, 100);
        b.write(1, "w2", 200, 200);
        let s2 = b.send(1, "w2", 200, 200);
        let s2o = b.send(1, "w2", 200, 200);
        b.receive(0, "w2", s2, 210, 210, &["w1", "w2"]);
        b.write(1, "w3", 300, 300);
        let s3 = b.send(1, "w3", 300, 300);
        let s3o = b.send(1, "w3", 300, 300);
        b.receive(0, "w3", s3, 310, 310, &["w1", "w2", "w3"]);
        b.write(0, "w4", 400, 400);
        let s4 = b.send(0, "w4", 400, 400);
        b.receive(2, "w1", s1, 401, 401, &["w1"]);
        b.receive(2, "w2", s2o, 402, 402, &["w1", "w2"]);
        if w3_first {
            b.receive(2, "w3", s3o, 403, 403, &["w1", "w2", "w3"]);
            b.receive(2, "w4", s4, 410, 410, &["w1", "w2", "w3", "w4"]);
            b.read(2, 450, 450, &["w1", "w2", "w3", "w4"]);
        } else {
            b.receive(2, "w4", s4, 410, 410, &["w1", "w2", "w4"]);
            b.read(2, 450, 450, &["w1", "w2", "w4"]);
            b.receive(2, "w3", s3o, 500, 500, &["w1", "w2", "w3", "w4"]);
        }
        b.trace
    }

    #[test]
    fn observer_sees_effect_without_cause() {
        let t = observer_trace(false);
        t.validate().unwrap();
        match check_causal_consistency(&t) {
            CausalOutcome::Violation { missing, present, .. } => assert_eq!((missing.as_str(), present.as_str()), ("w3", "w4")),
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn ordered_delivery_passes() {
        assert_eq!(check_causal_consistency(&observer_trace(true)), CausalOutcome::Pass);
        assert_eq!(check_causal_consistency(&Trace::default()), CausalOutcome::Pass);
    }

    #[test]
    fn eventual_consistency_compares_final_states() {
        let t = observer_trace(false);
        match check_eventual_consistency(&t, ms(1000)).unwrap() {
            EventualOutcome::Diverged { states } => assert_eq!(states.len(), 2),
            other => panic!("{other:?}"),
        }
        assert!(check_eventual_consistency(&t, ms(350)).is_err());
        let mut single = Builder::new(&["a"]);
        single.read(0, 1, 1, &["x"]);
        assert!(matches!(check_eventual_consistency(&single.trace, ms(0)).unwrap(), EventualOutcome::Converged { .. }));
    }

    #[test]
    fn logical_comparison_finds_earliest_divergence() {
        let a = observer_trace(true);
        assert_eq!(compare_logical_traces(&a, &a.clone()), LogicalComparison::Equal);
        let b = observer_trace(false);
        match compare_logical_traces(&a, &b) {
            LogicalComparison::FirstDivergence(d) => assert_eq!(d.tag, tag(403).min(tag(410))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_rejects_tag_regression_and_orphan_receive() {
        let mut b = Builder::new(&["a"]);
        b.read(0, 10, 10, &[]);
        b.read(0, 5, 11, &[]);
        assert_eq!(b.trace.validate().unwrap_err().position, 1);
        let mut b = Builder::new(&["a", "b"]);
        b.receive(0, "w", 99, 1, 1, &[]);
        assert!(b.trace.validate().is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut t = observer_trace(false);
        t.records[0].value = Some("tab\there -".into());
        t.records[1].value = Some("-".into());
        t.records[2].origin = Some(Tag::new(Timestamp::from_ns(5), 2));
        let text = t.render();
        assert_eq!(Trace::parse(&text).unwrap(), t);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let err = Trace::parse("# calsim trace v1\n# node 0 a federate\n0\twrite\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(Trace::parse("0\twrite").is_err());
    }

    proptest! {
        #[test]
        fn escaping_round_trips(s in ".*") {
            prop_assert_eq!(unescape_field(&escape_field(&s)).unwrap(), s);
        }

        #[test]
        fn metrics_are_nonnegative_except_apparent_latency(delays in proptest::collection::vec((0i64..500, -50i64..50), 1..6)) {
            let mut b = Builder::new(&["i", "j"]);
            let mut t = 0;
            let mut links = Vec::new();
            for (k, (d, _)) in delays.iter().enumerate() {
                t += 10;
                let w = format!("w{k}");
                b.write(1, &w, t, t);
                links.push((w.clone(), b.send(1, &w, t, t), t + d));
            }
            let mut last = 0;
            for (w, s, at) in links.iter() {
                last = last.max(*at);
                b.receive(0, w, *s, last, last, &[]);
            }
            prop_assert!(inconsistency(&b.trace, 0, 1) >= Interval::ZERO);
            prop_assert!(unavailability(&b.trace, 0) >= Interval::ZERO);
            prop_assert!(processing_offset(&b.trace, 1) >= Interval::ZERO);
        }
    }
}
