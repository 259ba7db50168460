//! Deterministic virtual-time simulator.
//!
//! Federates see only their own skewed clocks; virtual time orders every
//! event on one global queue. Links add seeded uniform jitter, keep each
//! channel FIFO and can be partitioned for virtual-time windows.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coord_central::{CentralError, CentralGate, CoordMessage, Rti};
use crate::coord_decentral::{resolve_offsets, DecentralGate};
use crate::engine::{Engine, EngineError, Message, Payload, Stall, StepCx, TardyPolicy};
use crate::fedmodel::{CoordinationMode, DerivedOffsets, ExecBounds, FederationSpec, ModelError, Resolved};
use crate::maxplus::MaxPlusMatrix;
use crate::metrics::{InvariantViolation, NodeInfo, NodeRole, RecordKind, Trace, TraceRecord};
use crate::scenarios::{Datum, MergeOp, Replica};
use crate::timekit::{Interval, Tag, Timestamp};

/// Name of the coordinator node in centralized runs.
pub const RTI: &str = "rti";

/// Local clock of one node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockModel {
    #[serde(default)]
    pub offset: Interval,
    /// Rate error in parts per billion.
    #[serde(default)]
    pub drift_ppb: i64,
    /// Bound on `|clock - virtual time|`; the skew is clamped to it.
    #[serde(default)]
    pub error_bound: Interval,
}

impl ClockModel {
    pub fn read(&self, vt: Timestamp) -> Timestamp {
        if !vt.is_finite() {
            return vt;
        }
        let e = self.error_bound.as_ns().max(0);
        let drift = (self.drift_ppb as i128 * vt.as_ns() as i128 / 1_000_000_000) as i64;
        let skew = self.offset.as_ns().saturating_add(drift).clamp(-e, e);
        vt.plus(Interval::from_ns(skew))
    }

    /// Earliest virtual time at which the clock reads at least `clock`.
    pub fn inverse(&self, clock: Timestamp) -> Timestamp {
        if !clock.is_finite() {
            return clock;
        }
        let e = self.error_bound.as_ns().max(0);
        let (mut lo, mut hi) = (clock.as_ns().saturating_sub(e + 1), clock.as_ns().saturating_add(e + 1));
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.read(Timestamp::from_ns(mid)) >= clock {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Timestamp::from_ns(lo)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionPolicy {
    /// Retry until the partition heals.
    #[default]
    Buffer,
    Drop,
}

/// A `(start, end]` window during which a link carries nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub start: Timestamp,
    pub end: Timestamp,
    #[serde(default)]
    pub policy: PartitionPolicy,
}

impl Partition {
    fn covers(&self, t: Timestamp) -> bool {
        self.start < t && t <= self.end
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    pub latency: Interval,
    /// Upper end of the uniform jitter range `[0, jitter]`.
    #[serde(default)]
    pub jitter: Interval,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partitions: Vec<Partition>,
}

impl LinkModel {
    pub fn constant(latency: Interval) -> Self {
        LinkModel { latency, jitter: Interval::ZERO, partitions: Vec::new() }
    }

    /// Largest latency outside partitions.
    pub fn worst(&self) -> Interval {
        self.latency.checked_add(self.jitter).unwrap_or(Interval::INF)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub from: String,
    pub to: String,
    #[serde(flatten)]
    pub model: LinkModel,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Links {
    pub default: LinkModel,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<LinkOverride>,
}

impl Links {
    pub fn model(&self, from: &str, to: &str) -> &LinkModel {
        self.overrides.iter().find(|o| o.from == from && o.to == to).map_or(&self.default, |o| &o.model)
    }
}

/// One scripted user input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stimulus {
    pub at: Timestamp,
    pub federate: String,
    pub action: String,
    pub value: Datum,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

fn default_tan_period() -> Interval {
    Interval::from_ms(10)
}

fn default_true() -> bool {
    true
}

/// Everything a simulation run needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub federation: FederationSpec,
    /// Replica merge operation per federate; federates without one keep no state.
    #[serde(default)]
    pub merges: BTreeMap<String, MergeOp>,
    #[serde(default = "default_true")]
    pub overdraft: bool,
    #[serde(default)]
    pub clocks: BTreeMap<String, ClockModel>,
    pub links: Links,
    #[serde(default)]
    pub stimuli: Vec<Stimulus>,
    #[serde(default)]
    pub seed: u64,
    pub horizon: Timestamp,
    #[serde(default = "default_tan_period")]
    pub tan_period: Interval,
    /// Send absent indications in decentralized mode; centralized runs always send them.
    #[serde(default)]
    pub absent_messages: bool,
}

impl SimConfig {
    pub fn clock(&self, node: &str) -> ClockModel {
        self.clocks.get(node).copied().unwrap_or_default()
    }

    /// Worst latency from federate `j` to federate `i`, through the RTI in centralized mode.
    pub fn latency_bound(&self, i: usize, j: usize) -> Interval {
        let fi = &self.federation.federates[i].name;
        let fj = &self.federation.federates[j].name;
        match self.federation.mode {
            CoordinationMode::Decentralized => self.links.model(fj, fi).worst(),
            CoordinationMode::Centralized => {
                self.links.model(fj, RTI).worst().checked_add(self.links.model(RTI, fi).worst()).unwrap_or(Interval::INF)
            }
        }
    }

    /// `L_ij`, with a zero diagonal.
    pub fn latency_bounds(&self) -> MaxPlusMatrix {
        MaxPlusMatrix::from_fn(self.federation.federates.len(), |i, j| {
            if i == j {
                Interval::ZERO
            } else {
                self.latency_bound(i, j)
            }
        })
    }

    /// `E_ij = E_i + E_j`, with a zero diagonal.
    pub fn clock_error_bounds(&self) -> MaxPlusMatrix {
        let feds = &self.federation.federates;
        MaxPlusMatrix::from_fn(feds.len(), |i, j| {
            if i == j {
                Interval::ZERO
            } else {
                let e = |k: usize| self.clock(&feds[k].name).error_bound;
                e(i).checked_add(e(j)).unwrap_or(Interval::INF)
            }
        })
    }

    /// Offsets a decentralized run uses, from the bounds and any explicit values.
    pub fn offsets(&self) -> Result<DerivedOffsets, ModelError> {
        resolve_offsets(&self.federation, &self.latency_bounds(), &self.clock_error_bounds(), &ExecBounds::default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeadlockReport {
    pub at: Timestamp,
    /// Each stalled federate with the federates it waits for.
    pub waits_for: Vec<(String, Vec<String>)>,
}

impl std::fmt::Display for DeadlockReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "deadlock at {}:", self.at)?;
        for (fed, on) in &self.waits_for {
            write!(f, " {fed} -> [{}]", on.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("{federate}: {error}")]
    Engine { federate: String, error: EngineError },
    #[error("{0}")]
    Deadlock(DeadlockReport),
    #[error("trace invariant violated at record {}: {}", .0.position, .0.message)]
    Invariant(InvariantViolation),
}

impl From<CentralError> for SimError {
    fn from(e: CentralError) -> Self {
        match e {
            CentralError::ProtocolViolation(m) => SimError::ProtocolViolation(m),
            CentralError::Model(m) => SimError::Model(m),
        }
    }
}

#[derive(Debug, Clone)]
enum Wire {
    Data { conn: usize, tag: Tag, sent: Tag, payload: Payload, send_id: u64 },
    Absent { conn: usize, tag: Tag },
    Coord(CoordMessage),
}

#[derive(Debug, Clone)]
enum Event {
    Stimulus(usize),
    Deliver { from: usize, to: usize, wire: Wire },
    Wake(usize),
    /// A port's absence deadline; runs after everything else at the same instant.
    Timeout(usize),
    TanTick(usize),
}

impl Event {
    fn class(&self) -> u8 {
        match self {
            Event::Stimulus(_) => 0,
            Event::Deliver { .. } => 1,
            Event::Wake(_) => 2,
            Event::Timeout(_) => 3,
            Event::TanTick(_) => 4,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct CentralFed {
    granted: Option<Tag>,
    provisional: bool,
    last_net: Option<Tag>,
    last_ltc: Option<Tag>,
    last_tan: Option<Timestamp>,
    tan_done: bool,
    ticking: bool,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    res: Resolved,
    mode: CoordinationMode,
    n: usize,
    names: Vec<String>,
    clocks: Vec<ClockModel>,
    engines: Vec<Engine>,
    offsets: Option<DerivedOffsets>,
    rti: Option<Rti>,
    central: Vec<CentralFed>,
    physical_inputs: Vec<bool>,
    stimuli_left: Vec<usize>,
    stimuli: Vec<(usize, usize)>,
    queue: BTreeMap<(Timestamp, u8, u64), Event>,
    seq: u64,
    wakes: BTreeMap<(usize, Timestamp), u8>,
    rngs: BTreeMap<(usize, usize), ChaCha8Rng>,
    link_last: BTreeMap<(usize, usize), Timestamp>,
    trace: Vec<TraceRecord>,
}

/// Runs a scenario to its horizon and returns the validated trace.
pub fn run(cfg: &SimConfig) -> Result<Trace, SimError> {
    let mut sim = Sim::new(cfg)?;
    sim.run()?;
    let trace = Trace { nodes: sim.node_infos(), records: sim.trace };
    trace.validate().map_err(SimError::Invariant)?;
    Ok(trace)
}

fn push(trace: &mut Vec<TraceRecord>, mut r: TraceRecord) {
    r.id = trace.last().map_or(0, |l| l.id + 1);
    trace.push(r);
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self, SimError> {
        let spec = &cfg.federation;
        let res = spec.resolve()?;
        let n = spec.federates.len();
        let mode = spec.mode;
        for name in cfg.merges.keys() {
            if spec.federate_index(name).is_none() {
                return Err(SimError::Config(format!("merge assigned to unknown federate {name:?}")));
            }
        }
        let policy = match mode {
            CoordinationMode::Centralized => TardyPolicy::Violation,
            CoordinationMode::Decentralized => TardyPolicy::Handle,
        };
        let engines = (0..n)
            .map(|f| {
                let replica = cfg.merges.get(&spec.federates[f].name).map(|op| Replica::new(*op).with_overdraft(cfg.overdraft));
                Engine::new(spec, &res, f, f, replica, policy)
                    .with_absent_messages(cfg.absent_messages || mode == CoordinationMode::Centralized)
            })
            .collect();
        let mut stimuli = Vec::new();
        let mut stimuli_left = vec![0; n];
        for (k, s) in cfg.stimuli.iter().enumerate() {
            let f = spec
                .federate_index(&s.federate)
                .ok_or_else(|| SimError::Config(format!("stimulus {k} names unknown federate {:?}", s.federate)))?;
            let a = spec.federates[f]
                .actions
                .iter()
                .position(|a| a.name == s.action && a.is_physical())
                .ok_or_else(|| SimError::Config(format!("stimulus {k}: {} has no physical action {:?}", s.federate, s.action)))?;
            stimuli.push((f, a));
            if s.at < cfg.horizon {
                stimuli_left[f] += 1;
            }
        }
        let physical_inputs =
            (0..n).map(|f| res.incoming.iter().any(|((g, _), c)| *g == f && res.connections[*c].physical)).collect();
        let (offsets, rti) = match mode {
            CoordinationMode::Decentralized => (Some(cfg.offsets()?), None),
            CoordinationMode::Centralized => (None, Some(Rti::new(spec)?)),
        };
        let mut names: Vec<String> = spec.federates.iter().map(|f| f.name.clone()).collect();
        if mode == CoordinationMode::Centralized {
            names.push(RTI.into());
        }
        let clocks = names.iter().map(|nm| cfg.clock(nm)).collect();
        Ok(Sim {
            cfg,
            res,
            mode,
            n,
            names,
            clocks,
            engines,
            offsets,
            rti,
            central: vec![CentralFed::default(); n],
            physical_inputs,
            stimuli_left,
            stimuli,
            queue: BTreeMap::new(),
            seq: 0,
            wakes: BTreeMap::new(),
            rngs: BTreeMap::new(),
            link_last: BTreeMap::new(),
            trace: Vec::new(),
        })
    }

    fn node_infos(&self) -> Vec<NodeInfo> {
        self.names
            .iter()
            .enumerate()
            .map(|(k, name)| NodeInfo { name: name.clone(), role: if k < self.n { NodeRole::Federate } else { NodeRole::Rti } })
            .collect()
    }

    fn schedule(&mut self, vt: Timestamp, ev: Event) {
        self.seq += 1;
        self.queue.insert((vt, ev.class(), self.seq), ev);
    }

    fn clock(&self, node: usize, vt: Timestamp) -> Timestamp {
        if node == self.n {
            vt
        } else {
            self.clocks[node].read(vt)
        }
    }

    fn rti_node(&self) -> usize {
        self.n
    }

    fn send(&mut self, from: usize, to: usize, vt: Timestamp, wire: Wire) {
        let link = self.cfg.links.model(&self.names[from], &self.names[to]);
        let (latency, jitter) = (link.latency, link.jitter);
        let seed = self.cfg.seed;
        let rng = self.rngs.entry((from, to)).or_insert_with(|| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(((from as u64) << 32) | to as u64);
            r
        });
        let j = if jitter > Interval::ZERO { rng.gen_range(0..=jitter.as_ns()) } else { 0 };
        let delay = latency.checked_add(Interval::from_ns(j)).unwrap_or(Interval::INF);
        let mut arrive = vt.plus(delay);
        let mut partitions = link.partitions.clone();
        partitions.sort_by_key(|p| p.start);
        for p in &partitions {
            if p.covers(vt) || p.covers(arrive) {
                match p.policy {
                    PartitionPolicy::Drop => return,
                    PartitionPolicy::Buffer => arrive = arrive.max(p.end.plus(delay)),
                }
            }
        }
        let last = self.link_last.entry((from, to)).or_insert(Timestamp::NEG_INF);
        arrive = arrive.max(*last);
        *last = arrive;
        self.schedule(arrive, Event::Deliver { from, to, wire });
    }

    fn ctrl(&mut self, kind: RecordKind, node: usize, vt: Timestamp, msg: &CoordMessage, peer: usize) {
        let mut r = TraceRecord::new(kind, node, msg.tag(), vt, self.clock(node, vt));
        r.port = Some(self.names[peer].clone());
        r.value = Some(msg.name().into());
        push(&mut self.trace, r);
    }

    fn send_coord(&mut self, from: usize, to: usize, vt: Timestamp, msg: CoordMessage) {
        self.ctrl(RecordKind::CtrlSend, from, vt, &msg, to);
        self.send(from, to, vt, Wire::Coord(msg));
    }

    fn run(&mut self) -> Result<(), SimError> {
        let horizon = self.cfg.horizon;
        for k in 0..self.cfg.stimuli.len() {
            self.schedule(self.cfg.stimuli[k].at, Event::Stimulus(k));
        }
        for f in 0..self.n {
            self.schedule(Timestamp::ZERO, Event::Wake(f));
            if self.mode == CoordinationMode::Centralized && self.rti.as_ref().is_some_and(|r| r.federate(f).has_physical) {
                self.central[f].ticking = true;
                self.schedule(Timestamp::ZERO, Event::TanTick(f));
            }
        }
        let mut now = Timestamp::ZERO;
        while let Some(entry) = self.queue.first_entry() {
            let (vt, _, _) = *entry.key();
            if vt >= horizon {
                return Ok(());
            }
            let ev = entry.remove();
            now = vt;
            match ev {
                Event::Stimulus(k) => self.on_stimulus(k, vt)?,
                Event::Wake(f) | Event::Timeout(f) => {
                    self.wakes.remove(&(f, vt));
                    self.drive(f, vt)?;
                }
                Event::TanTick(f) => self.on_tan_tick(f, vt)?,
                Event::Deliver { from, to, wire } => self.on_deliver(from, to, vt, wire)?,
            }
        }
        let stalled: Vec<usize> = (0..self.n).filter(|&f| self.engines[f].is_busy()).collect();
        if stalled.is_empty() {
            return Ok(());
        }
        let waits_for = stalled
            .iter()
            .map(|&f| {
                let on = match &self.rti {
                    Some(rti) => rti.waits_for(f).into_iter().map(|j| self.names[j].clone()).collect(),
                    None => Vec::new(),
                };
                (self.names[f].clone(), on)
            })
            .collect();
        Err(SimError::Deadlock(DeadlockReport { at: now, waits_for }))
    }

    fn floor(&self, f: usize) -> Tag {
        match self.central[f].last_tan {
            Some(t) => Tag::at(t.plus(Interval::from_ns(1))),
            None => Tag::NEG_INF,
        }
    }

    fn engine_err(&self, f: usize) -> impl Fn(EngineError) -> SimError + '_ {
        move |error| match error {
            EngineError::ProtocolViolation(m) => SimError::ProtocolViolation(format!("{}: {m}", self.names[f])),
            error => SimError::Engine { federate: self.names[f].clone(), error },
        }
    }

    fn on_stimulus(&mut self, k: usize, vt: Timestamp) -> Result<(), SimError> {
        let (f, a) = self.stimuli[k];
        let s = &self.cfg.stimuli[k];
        let clock = self.clock(f, vt);
        let floor = self.floor(f);
        self.engines[f].schedule_stimulus(a, clock, floor, s.label.clone(), s.value.clone()).map_err(self.engine_err(f))?;
        self.stimuli_left[f] = self.stimuli_left[f].saturating_sub(1);
        self.drive(f, vt)?;
        self.maybe_finish_tan(f, vt);
        Ok(())
    }

    fn maybe_finish_tan(&mut self, f: usize, vt: Timestamp) {
        if self.mode != CoordinationMode::Centralized || self.physical_inputs[f] || self.stimuli_left[f] > 0 {
            return;
        }
        let st = &mut self.central[f];
        if !st.ticking || st.tan_done {
            return;
        }
        st.tan_done = true;
        st.last_tan = Some(Timestamp::INF);
        let rti = self.rti_node();
        self.send_coord(f, rti, vt, CoordMessage::TimeAdvanceNotice(f, Timestamp::INF));
    }

    fn on_tan_tick(&mut self, f: usize, vt: Timestamp) -> Result<(), SimError> {
        if self.central[f].tan_done {
            return Ok(());
        }
        if !self.physical_inputs[f] && self.stimuli_left[f] == 0 {
            self.maybe_finish_tan(f, vt);
            return Ok(());
        }
        let clock = self.clock(f, vt);
        if self.central[f].last_tan.is_none_or(|t| clock > t) {
            self.central[f].last_tan = Some(clock);
            let rti = self.rti_node();
            self.send_coord(f, rti, vt, CoordMessage::TimeAdvanceNotice(f, clock));
        }
        let next = vt.plus(self.cfg.tan_period.max(Interval::from_ns(1)));
        if next < self.cfg.horizon {
            self.schedule(next, Event::TanTick(f));
        }
        Ok(())
    }

    fn on_deliver(&mut self, from: usize, to: usize, vt: Timestamp, wire: Wire) -> Result<(), SimError> {
        match wire {
            Wire::Data { conn, tag, sent, payload, send_id } => {
                let input = self.res.connections[conn].to.1;
                self.deliver_data(to, input, Message { tag, sent, payload, send_id }, vt)?;
            }
            Wire::Absent { conn, tag } => {
                let input = self.res.connections[conn].to.1;
                self.engines[to].deliver_absent(input, tag);
            }
            Wire::Coord(msg) => {
                self.ctrl(RecordKind::CtrlRecv, to, vt, &msg, from);
                if to == self.rti_node() {
                    let out = self.rti.as_mut().expect("centralized run").handle(from, msg)?;
                    for (dest, m) in out {
                        self.send_coord(to, dest, vt, m);
                    }
                    return Ok(());
                }
                match msg {
                    CoordMessage::TagAdvanceGrant(g) => {
                        let st = &mut self.central[to];
                        if st.granted.is_none_or(|x| g >= x) {
                            st.granted = Some(g);
                            st.provisional = false;
                        }
                    }
                    CoordMessage::ProvisionalTagAdvanceGrant(g) => {
                        let st = &mut self.central[to];
                        if st.granted.is_none_or(|x| g > x) {
                            st.granted = Some(g);
                            st.provisional = true;
                        }
                    }
                    CoordMessage::TaggedMessage { conn, tag, sent, payload, send_id } => {
                        let input = self.res.connections[conn].to.1;
                        self.deliver_data(to, input, Message { tag, sent, payload, send_id }, vt)?;
                    }
                    CoordMessage::AbsentMessage { conn, tag } => {
                        let input = self.res.connections[conn].to.1;
                        self.engines[to].deliver_absent(input, tag);
                    }
                    other => {
                        return Err(SimError::ProtocolViolation(format!("{} received {}", self.names[to], other.name())))
                    }
                }
            }
        }
        self.drive(to, vt)
    }

    fn deliver_data(&mut self, f: usize, input: usize, msg: Message, vt: Timestamp) -> Result<(), SimError> {
        let clock = self.clock(f, vt);
        let floor = self.floor(f);
        let mut cx = StepCx::new(clock, vt, &mut self.trace);
        let out = self.engines[f].deliver(input, msg, clock, floor, &mut cx);
        out.map(|_| ()).map_err(self.engine_err(f))
    }

    fn drive(&mut self, f: usize, vt: Timestamp) -> Result<(), SimError> {
        let clock = self.clock(f, vt);
        let mut cx = StepCx::new(clock, vt, &mut self.trace);
        let stall = match self.mode {
            CoordinationMode::Decentralized => {
                let offsets = self.offsets.as_ref().expect("decentralized run");
                let gate = DecentralGate { clock, federate: f, offsets };
                self.engines[f].step(&gate, &mut cx)
            }
            CoordinationMode::Centralized => {
                let st = &self.central[f];
                let gate = CentralGate {
                    clock,
                    has_upstream: self.rti.as_ref().is_some_and(|r| r.has_upstream(f)),
                    granted: st.granted.unwrap_or(Tag::NEG_INF),
                    provisional: st.provisional,
                };
                self.engines[f].step(&gate, &mut cx)
            }
        };
        let StepCx { outbox, completed, .. } = cx;
        let stall = match stall {
            Ok(s) => s,
            Err(e) => return Err(self.engine_err(f)(e)),
        };
        match self.mode {
            CoordinationMode::Decentralized => {
                for o in outbox {
                    let to = self.res.connections[o.conn].to.0;
                    let wire = match o.payload {
                        Some(payload) => Wire::Data {
                            conn: o.conn,
                            tag: o.tag,
                            sent: o.sent,
                            payload,
                            send_id: o.send_id.unwrap_or_default(),
                        },
                        None => Wire::Absent { conn: o.conn, tag: o.tag },
                    };
                    self.send(f, to, vt, wire);
                }
            }
            CoordinationMode::Centralized => {
                let rti = self.rti_node();
                for o in outbox {
                    let msg = match o.payload {
                        Some(payload) => CoordMessage::TaggedMessage {
                            conn: o.conn,
                            tag: o.tag,
                            sent: o.sent,
                            payload,
                            send_id: o.send_id.unwrap_or_default(),
                        },
                        None => CoordMessage::AbsentMessage { conn: o.conn, tag: o.tag },
                    };
                    self.send_coord(f, rti, vt, msg);
                }
                if let Some(&done) = completed.last() {
                    if self.central[f].last_ltc != Some(done) {
                        self.central[f].last_ltc = Some(done);
                        self.send_coord(f, rti, vt, CoordMessage::LogicalTagComplete(f, done));
                    }
                }
                let net = self.engines[f].next_event();
                if self.central[f].last_net != Some(net) {
                    self.central[f].last_net = Some(net);
                    self.send_coord(f, rti, vt, CoordMessage::NextEventTag(f, net));
                }
            }
        }
        if let Some(w) = stall.wake() {
            let at = self.clocks[f].inverse(w).max(vt);
            let ev = match stall {
                Stall::Ports { .. } => Event::Timeout(f),
                _ => Event::Wake(f),
            };
            let class = ev.class();
            if at.is_finite() && self.wakes.get(&(f, at)).is_none_or(|c| class < *c) {
                self.wakes.insert((f, at), class);
                self.schedule(at, ev);
            }
        }
        Ok(())
    }
}

/// Tardy records in a trace.
pub fn tardy_count(trace: &Trace) -> usize {
    trace.records.iter().filter(|r| r.kind == RecordKind::Tardy).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clock_reads_within_bound() {
        let c = ClockModel { offset: Interval::from_ms(3), drift_ppb: 0, error_bound: Interval::from_ms(2) };
        assert_eq!(c.read(Timestamp::from_ms(10)), Timestamp::from_ms(12));
        assert_eq!(c.inverse(Timestamp::from_ms(12)), Timestamp::from_ms(10));
    }

    proptest! {
        #[test]
        fn clock_error_bounded_and_monotone(
            offset in -5_000i64..5_000,
            drift in 0i64..100_000,
            e in 0i64..3_000,
            t in 0i64..10_000_000_000,
        ) {
            let c = ClockModel { offset: Interval::from_ns(offset), drift_ppb: drift, error_bound: Interval::from_ns(e) };
            let vt = Timestamp::from_ns(t);
            let r = c.read(vt);
            prop_assert!((r.as_ns() - t).abs() <= e);
            prop_assert!(c.read(Timestamp::from_ns(t + 1)) > r);
            let inv = c.inverse(r);
            prop_assert!(inv <= vt && c.read(inv) >= r);
        }
    }

    #[test]
    fn partition_windows_are_half_open() {
        let p = Partition { start: Timestamp::from_ms(10), end: Timestamp::from_ms(20), policy: PartitionPolicy::Buffer };
        assert!(!p.covers(Timestamp::from_ms(10)));
        assert!(p.covers(Timestamp::from_ms(20)));
    }
}
