//! Per-federate reactor runtime shared by both coordination modes.
//!
//! An [`Engine`] owns the event queue of one federate and executes its
//! reactions tag by tag. Whether a tag may be processed, and whether an input
//! port is known at a tag, is decided by a [`Gate`] supplied by the
//! coordinator. Every observable event is appended to the shared trace.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::coord_decentral::{apply_min_spacing, check_deadline, DeadlineCheck, SpacingOutcome};
use crate::fedmodel::{ActionKind, FederationSpec, Node, Resolved};
use crate::metrics::{RecordKind, TraceRecord};
use crate::scenarios::{behavior, Datum, MergeError, Replica, Update};
use crate::timekit::{Interval, Tag, TimeError, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Stimulus { label: Option<String>, value: Datum },
    Update(Update),
    Response { state: String, provenance: Vec<String> },
}

impl Payload {
    fn value_string(&self) -> String {
        match self {
            Payload::Stimulus { value, .. } => value.to_string(),
            Payload::Update(u) => u.value.to_string(),
            Payload::Response { state, .. } => state.clone(),
        }
    }

    fn write_id(&self) -> Option<String> {
        match self {
            Payload::Update(u) => Some(u.write.clone()),
            _ => None,
        }
    }

    fn provenance(&self) -> Vec<String> {
        match self {
            Payload::Stimulus { .. } => Vec::new(),
            Payload::Update(u) => vec![u.write.clone()],
            Payload::Response { provenance, .. } => provenance.clone(),
        }
    }
}

/// A message in flight or queued at its receiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    /// Tag at which the receiver processes it.
    pub tag: Tag,
    /// Tag at which the sender produced it.
    pub sent: Tag,
    pub payload: Payload,
    pub send_id: u64,
}

/// Traffic produced by a step, to be routed by the coordinator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub conn: usize,
    /// Receiver tag: the sender tag delayed by the connection's `after`.
    pub tag: Tag,
    pub sent: Tag,
    /// `None` announces that the port is absent at `tag`.
    pub payload: Option<Payload>,
    pub send_id: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wait {
    Ready,
    /// Ready once the local clock reaches the timestamp.
    Until(Timestamp),
    /// Ready only after a coordination message arrives.
    Blocked,
}

/// Coordinator policy consulted before advancing and before reading a port.
pub trait Gate {
    fn advance(&self, tag: Tag) -> Wait;
    fn port(&self, input: usize, tag: Tag) -> Wait;
}

/// Why a step returned without finishing all pending work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stall {
    Idle,
    Advance { tag: Tag, wake: Option<Timestamp> },
    Ports { tag: Tag, ports: Vec<usize>, wake: Option<Timestamp> },
}

impl Stall {
    pub fn wake(&self) -> Option<Timestamp> {
        match self {
            Stall::Idle => None,
            Stall::Advance { wake, .. } | Stall::Ports { wake, .. } => *wake,
        }
    }
}

/// Ambient state for one step.
pub struct StepCx<'a> {
    pub clock: Timestamp,
    pub vt: Timestamp,
    pub trace: &'a mut Vec<TraceRecord>,
    pub outbox: Vec<Outgoing>,
    /// Tags completed during this step, in order.
    pub completed: Vec<Tag>,
}

impl<'a> StepCx<'a> {
    pub fn new(clock: Timestamp, vt: Timestamp, trace: &'a mut Vec<TraceRecord>) -> Self {
        StepCx { clock, vt, trace, outbox: Vec::new(), completed: Vec::new() }
    }

    fn push(&mut self, mut r: TraceRecord) -> u64 {
        r.id = self.trace.last().map_or(0, |l| l.id + 1);
        let id = r.id;
        self.trace.push(r);
        id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Unconnected,
    Logical(usize),
    Physical(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TardyPolicy {
    /// A late message is a coordination failure.
    Violation,
    /// A late message runs the fault handler.
    Handle,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivery {
    Queued(Tag),
    Tardy,
}

#[derive(Debug, Clone, Default)]
struct TagEvents {
    startup: bool,
    actions: BTreeMap<usize, Payload>,
    inputs: BTreeMap<usize, Message>,
}

impl TagEvents {
    fn present(&self, n: Node) -> bool {
        match n {
            Node::Startup => self.startup,
            Node::Input(i) => self.inputs.contains_key(&i),
            Node::Action(a) => self.actions.contains_key(&a),
            Node::Output(_) => false,
        }
    }
}

#[derive(Debug)]
struct Exec {
    tag: Tag,
    events: TagEvents,
    next: usize,
    resolved: BTreeSet<usize>,
    consumed: BTreeSet<usize>,
    written: BTreeSet<usize>,
    absent_sent: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
struct Channel {
    conn: usize,
    after: Option<Interval>,
    physical: bool,
    label: String,
}

#[derive(Debug, Clone)]
struct Reaction {
    triggers: Vec<Node>,
    effects: Vec<Node>,
    behavior: String,
    deadline: Option<(Interval, String)>,
    fault_handler: Option<String>,
}

/// Runtime state of one federate.
#[derive(Debug)]
pub struct Engine {
    index: usize,
    node: usize,
    name: String,
    bank: u32,
    input_names: Vec<String>,
    inputs: Vec<InputKind>,
    outgoing: Vec<Vec<Channel>>,
    writers: Vec<Vec<usize>>,
    actions: Vec<ActionKind>,
    reactions: Vec<Reaction>,
    replica: Option<Replica>,
    queue: BTreeMap<Tag, TagEvents>,
    exec: Option<Exec>,
    completed: Tag,
    write_seq: u64,
    emit_absent: bool,
    last_physical: Vec<Option<Tag>>,
    last_seen: Vec<Tag>,
    absent_upto: Vec<Tag>,
    tardy_policy: TardyPolicy,
    tardy_count: usize,
}

impl Engine {
    /// Builds the engine for federate `index`; `node` is its trace node index.
    pub fn new(
        spec: &FederationSpec,
        res: &Resolved,
        index: usize,
        node: usize,
        replica: Option<Replica>,
        tardy_policy: TardyPolicy,
    ) -> Engine {
        let f = &spec.federates[index];
        let inputs = (0..f.inputs.len())
            .map(|i| match res.incoming.get(&(index, i)) {
                None => InputKind::Unconnected,
                Some(&c) if res.connections[c].physical => InputKind::Physical(c),
                Some(&c) => InputKind::Logical(c),
            })
            .collect();
        let outgoing = res.outgoing[index]
            .iter()
            .map(|conns| {
                conns
                    .iter()
                    .map(|&c| {
                        let rc = &res.connections[c];
                        let (df, di) = rc.to;
                        Channel {
                            conn: c,
                            after: rc.after,
                            physical: rc.physical,
                            label: format!("{}.{}", spec.federates[df].name, spec.federates[df].inputs[di].name),
                        }
                    })
                    .collect()
            })
            .collect();
        let mut writers = vec![Vec::new(); f.outputs.len()];
        let reactions: Vec<Reaction> = res.reactions[index]
            .iter()
            .zip(&f.reactions)
            .enumerate()
            .map(|(k, (r, s))| {
                for e in &r.effects {
                    if let Node::Output(o) = e {
                        writers[*o].push(k);
                    }
                }
                Reaction {
                    triggers: r.triggers.clone(),
                    effects: r.effects.clone(),
                    behavior: s.behavior.clone(),
                    deadline: s.deadline.as_ref().map(|d| (d.bound, d.handler.clone())),
                    fault_handler: s.fault_handler.clone(),
                }
            })
            .collect();
        let mut queue = BTreeMap::new();
        if reactions.iter().any(|r| r.triggers.contains(&Node::Startup)) {
            queue.insert(Tag::ZERO, TagEvents { startup: true, ..TagEvents::default() });
        }
        Engine {
            index,
            node,
            name: f.name.clone(),
            bank: spec.bank_of(index),
            input_names: f.inputs.iter().map(|p| format!("{}.{}", f.name, p.name)).collect(),
            inputs,
            outgoing,
            writers,
            actions: f.actions.iter().map(|a| a.kind).collect(),
            reactions,
            replica,
            queue,
            exec: None,
            completed: Tag::NEG_INF,
            write_seq: 0,
            emit_absent: false,
            last_physical: vec![None; f.actions.len()],
            last_seen: vec![Tag::NEG_INF; f.inputs.len()],
            absent_upto: vec![Tag::NEG_INF; f.inputs.len()],
            tardy_policy,
            tardy_count: 0,
        }
    }

    /// Announce absent ports on logical connections once no reaction can still write them.
    pub fn with_absent_messages(mut self, on: bool) -> Self {
        self.emit_absent = on;
        self
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_kind(&self, input: usize) -> InputKind {
        self.inputs[input]
    }

    pub fn replica(&self) -> Option<&Replica> {
        self.replica.as_ref()
    }

    /// Last fully processed tag.
    pub fn completed(&self) -> Tag {
        self.completed
    }

    /// Tag currently being processed, if any.
    pub fn current(&self) -> Option<Tag> {
        self.exec.as_ref().map(|e| e.tag)
    }

    /// Earliest tag with pending work, including a tag in progress.
    pub fn next_event(&self) -> Tag {
        match &self.exec {
            Some(e) => e.tag,
            None => self.queue.keys().next().copied().unwrap_or(Tag::INF),
        }
    }

    pub fn is_busy(&self) -> bool {
        self.exec.is_some() || !self.queue.is_empty()
    }

    pub fn tardy_count(&self) -> usize {
        self.tardy_count
    }

    fn floor_tag(&self) -> Tag {
        self.exec.as_ref().map_or(self.completed, |e| e.tag).successor().max(Tag::ZERO)
    }

    /// Tags a physical stimulus arriving at local `clock`. `floor` is a lower
    /// bound imposed by the coordinator. Returns the tag used, or `None` if dropped.
    pub fn schedule_stimulus(
        &mut self,
        action: usize,
        clock: Timestamp,
        floor: Tag,
        label: Option<String>,
        value: Datum,
    ) -> Result<Option<Tag>, EngineError> {
        let kind = self.actions.get(action).copied().ok_or_else(|| {
            EngineError::Unsupported(format!("{} has no action {action}", self.name))
        })?;
        let request = Tag::at(clock).max(self.floor_tag()).max(floor);
        let last = self.last_physical[action];
        let pending = last.filter(|t| self.queue.get(t).is_some_and(|e| e.actions.contains_key(&action)));
        let payload = Payload::Stimulus { label, value };
        match apply_min_spacing(&kind, pending, request, last) {
            SpacingOutcome::Drop => Ok(None),
            SpacingOutcome::Schedule(tag) | SpacingOutcome::Replace(tag) => {
                self.queue.entry(tag).or_default().actions.insert(action, payload);
                self.last_physical[action] = Some(tag);
                Ok(Some(tag))
            }
        }
    }

    /// Accepts a message on `input`. `floor` bounds the tag of physical-connection deliveries.
    pub fn deliver(
        &mut self,
        input: usize,
        mut msg: Message,
        clock: Timestamp,
        floor: Tag,
        cx: &mut StepCx,
    ) -> Result<Delivery, EngineError> {
        match self.inputs.get(input) {
            Some(InputKind::Physical(_)) => {
                let tag = Tag::at(clock).max(self.floor_tag()).max(floor);
                msg.tag = tag;
                let slot = &mut self.queue.entry(tag).or_default().inputs;
                if slot.contains_key(&input) {
                    let tag = tag.successor();
                    msg.tag = tag;
                    self.queue.entry(tag).or_default().inputs.insert(input, msg);
                    return Ok(Delivery::Queued(tag));
                }
                slot.insert(input, msg);
                return Ok(Delivery::Queued(tag));
            }
            Some(InputKind::Logical(_)) => {}
            _ => return Err(EngineError::Unsupported(format!("{} input {input} is not connected", self.name))),
        }
        if msg.tag < self.last_seen[input] {
            return Err(EngineError::ProtocolViolation(format!(
                "channel into {} went back from {} to {}",
                self.input_names[input], self.last_seen[input], msg.tag
            )));
        }
        self.last_seen[input] = msg.tag;
        let tardy = match &self.exec {
            Some(e) => {
                msg.tag < e.tag
                    || (msg.tag == e.tag
                        && (e.resolved.contains(&input) || e.consumed.contains(&input) || e.events.inputs.contains_key(&input)))
            }
            None => msg.tag <= self.completed,
        };
        if tardy {
            return self.tardy(input, msg, cx).map(|_| Delivery::Tardy);
        }
        let tag = msg.tag;
        if let Some(e) = self.exec.as_mut().filter(|e| e.tag == tag) {
            e.events.inputs.insert(input, msg);
            return Ok(Delivery::Queued(tag));
        }
        let slot = &mut self.queue.entry(tag).or_default().inputs;
        if slot.contains_key(&input) {
            return Err(EngineError::ProtocolViolation(format!("two messages on {} at {tag}", self.input_names[input])));
        }
        slot.insert(input, msg);
        Ok(Delivery::Queued(tag))
    }

    /// Records that `input` carries nothing up to and including `tag`.
    pub fn deliver_absent(&mut self, input: usize, tag: Tag) {
        if let Some(a) = self.absent_upto.get_mut(input) {
            *a = (*a).max(tag);
        }
    }

    fn tardy(&mut self, input: usize, msg: Message, cx: &mut StepCx) -> Result<(), EngineError> {
        let current = self.exec.as_ref().map_or(self.completed, |e| e.tag);
        if self.tardy_policy == TardyPolicy::Violation {
            return Err(EngineError::ProtocolViolation(format!(
                "message for {} at {} arrived after {} was processed",
                self.input_names[input], msg.tag, current
            )));
        }
        self.tardy_count += 1;
        let at = self.exec.as_ref().map_or(current.max(Tag::ZERO), |e| e.tag);
        let mut r = self.record(cx, RecordKind::Tardy, at);
        r.port = Some(self.input_names[input].clone());
        r.origin = Some(msg.tag);
        r.link = Some(msg.send_id);
        r.write = msg.payload.write_id();
        r.value = Some(msg.tag.time().since(at.time()).map_or_else(|_| "inf".into(), |d| (-d).to_string()));
        cx.push(r);
        let handler = self
            .reactions
            .iter()
            .find(|r| r.triggers.contains(&Node::Input(input)) && r.fault_handler.is_some())
            .and_then(|r| r.fault_handler.clone());
        if handler.as_deref() == Some(behavior::REJECT) {
            return Ok(());
        }
        let origin = msg.tag;
        let mut r = self.record(cx, RecordKind::Receive, at);
        r.port = Some(self.input_names[input].clone());
        r.value = Some(msg.payload.value_string());
        r.write = msg.payload.write_id();
        r.link = Some(msg.send_id);
        r.origin = Some(origin);
        match (&msg.payload, self.replica.as_mut()) {
            (Payload::Update(u), Some(rep)) => {
                rep.merge(u, at)?;
                r.state = Some(rep.state());
                r.provenance = rep.provenance();
            }
            (p, _) => r.provenance = p.provenance(),
        }
        cx.push(r);
        Ok(())
    }

    fn record(&self, cx: &StepCx, kind: RecordKind, tag: Tag) -> TraceRecord {
        TraceRecord::new(kind, self.node, tag, cx.vt, cx.clock)
    }

    /// Processes as much pending work as the gate allows.
    pub fn step(&mut self, gate: &dyn Gate, cx: &mut StepCx) -> Result<Stall, EngineError> {
        loop {
            if self.exec.is_none() {
                let Some(&tag) = self.queue.keys().next() else {
                    return Ok(Stall::Idle);
                };
                match gate.advance(tag) {
                    Wait::Ready => {}
                    Wait::Until(t) => return Ok(Stall::Advance { tag, wake: Some(t) }),
                    Wait::Blocked => return Ok(Stall::Advance { tag, wake: None }),
                }
                let events = self.queue.remove(&tag).unwrap_or_default();
                self.exec = Some(Exec {
                    tag,
                    events,
                    next: 0,
                    resolved: BTreeSet::new(),
                    consumed: BTreeSet::new(),
                    written: BTreeSet::new(),
                    absent_sent: BTreeSet::new(),
                });
                let mut exec = self.exec.take().expect("just set");
                self.emit_absents(&mut exec, None, cx)?;
                self.exec = Some(exec);
            }
            let mut exec = self.exec.take().expect("exec present");
            while exec.next < self.reactions.len() {
                let k = exec.next;
                let mut waiting = Vec::new();
                let mut wake: Option<Timestamp> = None;
                let mut blocked = false;
                for t in &self.reactions[k].triggers {
                    let Node::Input(i) = *t else { continue };
                    if !matches!(self.inputs[i], InputKind::Logical(_)) || exec.resolved.contains(&i) {
                        continue;
                    }
                    if exec.events.inputs.contains_key(&i) || self.last_seen[i] > exec.tag || self.absent_upto[i] >= exec.tag {
                        exec.resolved.insert(i);
                        continue;
                    }
                    match gate.port(i, exec.tag) {
                        Wait::Ready => {
                            exec.resolved.insert(i);
                        }
                        Wait::Until(t) => {
                            wake = Some(wake.map_or(t, |w: Timestamp| w.min(t)));
                            waiting.push(i);
                        }
                        Wait::Blocked => {
                            blocked = true;
                            waiting.push(i);
                        }
                    }
                }
                if !waiting.is_empty() {
                    let tag = exec.tag;
                    self.exec = Some(exec);
                    let wake = if blocked && wake.is_none() { None } else { wake };
                    return Ok(Stall::Ports { tag, ports: waiting, wake });
                }
                if self.reactions[k].triggers.iter().any(|t| exec.events.present(*t)) {
                    self.run_reaction(&mut exec, k, cx)?;
                }
                exec.next += 1;
                self.emit_absents(&mut exec, Some(k), cx)?;
            }
            self.finish(exec, cx)?;
        }
    }

    fn finish(&mut self, mut exec: Exec, cx: &mut StepCx) -> Result<(), EngineError> {
        let pending: Vec<usize> = exec.events.inputs.keys().copied().filter(|i| !exec.consumed.contains(i)).collect();
        for i in pending {
            self.receive(&mut exec, i, false, cx)?;
        }
        self.emit_absents(&mut exec, Some(usize::MAX), cx)?;
        self.completed = exec.tag;
        cx.completed.push(exec.tag);
        Ok(())
    }

    fn emit_absents(&mut self, exec: &mut Exec, after: Option<usize>, cx: &mut StepCx) -> Result<(), EngineError> {
        if !self.emit_absent {
            return Ok(());
        }
        for o in 0..self.outgoing.len() {
            if exec.written.contains(&o) || exec.absent_sent.contains(&o) {
                continue;
            }
            let done = self.writers[o].iter().all(|&w| after.is_some_and(|k| w <= k));
            if !done {
                continue;
            }
            exec.absent_sent.insert(o);
            for ch in self.outgoing[o].iter().filter(|c| !c.physical) {
                cx.outbox.push(Outgoing {
                    conn: ch.conn,
                    tag: exec.tag.delayed(ch.after)?,
                    sent: exec.tag,
                    payload: None,
                    send_id: None,
                });
            }
        }
        Ok(())
    }

    fn emit(&mut self, exec: &mut Exec, o: usize, payload: &Payload, cx: &mut StepCx) -> Result<(), EngineError> {
        exec.written.insert(o);
        for ch in &self.outgoing[o] {
            let tag = if ch.physical { exec.tag } else { exec.tag.delayed(ch.after)? };
            let mut r = self.record(cx, RecordKind::Send, exec.tag);
            r.port = Some(ch.label.clone());
            r.value = Some(payload.value_string());
            r.write = payload.write_id();
            r.provenance = payload.provenance();
            let id = cx.push(r);
            cx.outbox.push(Outgoing { conn: ch.conn, tag, sent: exec.tag, payload: Some(payload.clone()), send_id: Some(id) });
        }
        Ok(())
    }

    fn receive(&mut self, exec: &mut Exec, i: usize, merge: bool, cx: &mut StepCx) -> Result<(), EngineError> {
        if !exec.consumed.insert(i) {
            return Ok(());
        }
        let Some(msg) = exec.events.inputs.get(&i) else { return Ok(()) };
        let mut r = self.record(cx, RecordKind::Receive, exec.tag);
        r.port = Some(self.input_names[i].clone());
        r.value = Some(msg.payload.value_string());
        r.write = msg.payload.write_id();
        r.link = Some(msg.send_id);
        if matches!(self.inputs[i], InputKind::Physical(_)) {
            r.origin = Some(msg.sent);
        }
        match (&msg.payload, self.replica.as_mut()) {
            (Payload::Update(u), Some(rep)) if merge => {
                rep.merge(u, exec.tag)?;
                r.state = Some(rep.state());
                r.provenance = rep.provenance();
            }
            (p, _) => r.provenance = p.provenance(),
        }
        cx.push(r);
        Ok(())
    }

    fn run_reaction(&mut self, exec: &mut Exec, k: usize, cx: &mut StepCx) -> Result<(), EngineError> {
        let rx = self.reactions[k].clone();
        let inputs: Vec<usize> =
            rx.triggers.iter().filter_map(|t| if let Node::Input(i) = t { Some(*i) } else { None }).collect();
        if let Some((bound, handler)) = &rx.deadline {
            if let DeadlineCheck::Missed(lateness) = check_deadline(*bound, exec.tag, cx.clock) {
                for &i in &inputs {
                    self.receive(exec, i, false, cx)?;
                }
                let mut r = self.record(cx, RecordKind::DeadlineMiss, exec.tag);
                r.port = Some(format!("{}.reaction{}", self.name, k + 1));
                r.value = Some(format!("{handler}:{lateness}"));
                cx.push(r);
                return Ok(());
            }
        }
        let outputs: Vec<usize> =
            rx.effects.iter().filter_map(|e| if let Node::Output(o) = e { Some(*o) } else { None }).collect();
        match rx.behavior.as_str() {
            behavior::SUBMIT | behavior::PUBLISH => {
                let stimuli: Vec<Payload> = rx
                    .triggers
                    .iter()
                    .filter_map(|t| if let Node::Action(a) = t { exec.events.actions.get(a).cloned() } else { None })
                    .collect();
                for p in stimuli {
                    let Payload::Stimulus { label, value } = p else { continue };
                    if rx.behavior == behavior::PUBLISH && value == Datum::Int(0) {
                        continue;
                    }
                    self.write_seq += 1;
                    let write = label.unwrap_or_else(|| format!("{}#{}", self.name, self.write_seq));
                    let u = Update { write: write.clone(), value: value.clone(), origin: exec.tag, bank: self.bank };
                    let mut r = self.record(cx, RecordKind::Write, exec.tag);
                    r.value = Some(value.to_string());
                    r.write = Some(write);
                    if let Some(rep) = self.replica.as_mut() {
                        rep.merge(&u, exec.tag)?;
                        r.state = Some(rep.state());
                        r.provenance = rep.provenance();
                    }
                    cx.push(r);
                    let payload = Payload::Update(u);
                    for &o in &outputs {
                        self.emit(exec, o, &payload, cx)?;
                    }
                }
            }
            behavior::MERGE => {
                for &i in &inputs {
                    self.receive(exec, i, true, cx)?;
                }
            }
            behavior::QUERY => {
                for &i in &inputs {
                    self.receive(exec, i, false, cx)?;
                }
                let mut r = self.record(cx, RecordKind::Read, exec.tag);
                if let Some(rep) = &self.replica {
                    r.state = Some(rep.state());
                    r.provenance = rep.provenance();
                }
                cx.push(r);
            }
            behavior::RESPOND => {
                for &i in &inputs {
                    self.receive(exec, i, false, cx)?;
                }
                let payload = match &self.replica {
                    Some(rep) => Payload::Response { state: rep.state(), provenance: rep.provenance() },
                    None => Payload::Response { state: "-".into(), provenance: Vec::new() },
                };
                for &o in &outputs {
                    self.emit(exec, o, &payload, cx)?;
                }
            }
            behavior::DISPLAY => {
                for &i in &inputs {
                    if !exec.events.inputs.contains_key(&i) {
                        continue;
                    }
                    self.receive(exec, i, false, cx)?;
                    let Payload::Response { state, provenance } = exec.events.inputs[&i].payload.clone() else {
                        continue;
                    };
                    let mut r = self.record(cx, RecordKind::Read, exec.tag);
                    r.port = Some(self.input_names[i].clone());
                    r.state = Some(state);
                    r.provenance = provenance;
                    cx.push(r);
                }
            }
            behavior::RELAY => {
                let mut payloads = Vec::new();
                for t in &rx.triggers {
                    match *t {
                        Node::Input(i) => {
                            if let Some(m) = exec.events.inputs.get(&i) {
                                payloads.push(m.payload.clone());
                            }
                            self.receive(exec, i, false, cx)?;
                        }
                        Node::Action(a) => payloads.extend(exec.events.actions.get(&a).cloned()),
                        _ => {}
                    }
                }
                for p in &payloads {
                    for e in &rx.effects {
                        match *e {
                            Node::Output(o) => self.emit(exec, o, p, cx)?,
                            Node::Action(a) => {
                                let ActionKind::Logical { min_delay } = self.actions[a] else {
                                    return Err(EngineError::Unsupported(format!(
                                        "{} cannot schedule a physical action from a reaction",
                                        self.name
                                    )));
                                };
                                let tag = exec.tag.delayed(Some(min_delay))?;
                                self.queue.entry(tag).or_default().actions.insert(a, p.clone());
                            }
                            _ => {}
                        }
                    }
                }
            }
            behavior::NOOP | behavior::APOLOGIZE => {}
            other => return Err(EngineError::Unsupported(format!("unknown behavior {other:?}"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedmodel::{ActionSpec, Connection, CoordinationMode, FederateSpec, InputPort, PortRef, ReactionSpec};
    use crate::scenarios::MergeOp;

    struct Open;

    impl Gate for Open {
        fn advance(&self, _: Tag) -> Wait {
            Wait::Ready
        }
        fn port(&self, _: usize, _: Tag) -> Wait {
            Wait::Ready
        }
    }

    struct Closed;

    impl Gate for Closed {
        fn advance(&self, _: Tag) -> Wait {
            Wait::Ready
        }
        fn port(&self, _: usize, _: Tag) -> Wait {
            Wait::Blocked
        }
    }

    fn rx(triggers: &[&str], effects: &[&str], behavior: &str) -> ReactionSpec {
        ReactionSpec {
            triggers: triggers.iter().map(|s| s.to_string()).collect(),
            effects: effects.iter().map(|s| s.to_string()).collect(),
            behavior: behavior.into(),
            deadline: None,
            fault_handler: None,
        }
    }

    fn member(name: &str) -> FederateSpec {
        FederateSpec {
            name: name.into(),
            bank: None,
            inputs: vec![InputPort { name: "update".into(), staa: None }],
            outputs: vec!["out".into()],
            actions: vec![ActionSpec::physical("op")],
            reactions: vec![
                rx(&["op"], &["out"], behavior::SUBMIT),
                rx(&["update"], &[], behavior::MERGE),
            ],
            sta: None,
        }
    }

    fn pair() -> FederationSpec {
        FederationSpec {
            federates: vec![member("a"), member("b")],
            connections: vec![
                Connection::logical(PortRef::new("a", "out"), PortRef::new("b", "update"), None),
                Connection::logical(PortRef::new("b", "out"), PortRef::new("a", "update"), None),
            ],
            mode: CoordinationMode::Decentralized,
        }
    }

    fn engine(spec: &FederationSpec, i: usize, policy: TardyPolicy) -> Engine {
        let res = spec.resolve().unwrap();
        Engine::new(spec, &res, i, i, Some(Replica::new(MergeOp::Add)), policy)
    }

    fn ms(v: i64) -> Timestamp {
        Timestamp::from_ms(v)
    }

    #[test]
    fn stimulus_write_and_send() {
        let spec = pair();
        let mut a = engine(&spec, 0, TardyPolicy::Handle);
        let tag = a.schedule_stimulus(0, ms(5), Tag::NEG_INF, Some("w1".into()), Datum::Int(7)).unwrap();
        assert_eq!(tag, Some(Tag::at(ms(5))));
        let mut trace = Vec::new();
        let mut cx = StepCx::new(ms(5), ms(5), &mut trace);
        assert_eq!(a.step(&Open, &mut cx).unwrap(), Stall::Idle);
        assert_eq!(cx.completed, vec![Tag::at(ms(5))]);
        assert_eq!(cx.outbox.len(), 1);
        assert_eq!(cx.outbox[0].tag, Tag::at(ms(5)));
        let kinds: Vec<RecordKind> = trace.iter().map(|r| r.kind).collect();
        assert_eq!(kinds, vec![RecordKind::Write, RecordKind::Send]);
        assert_eq!(trace[0].state.as_deref(), Some("7"));
        assert_eq!(trace[1].port.as_deref(), Some("b.update"));
    }

    #[test]
    fn blocked_port_stalls_then_delivery_resolves() {
        let spec = pair();
        let mut b = engine(&spec, 1, TardyPolicy::Handle);
        b.schedule_stimulus(0, ms(10), Tag::NEG_INF, None, Datum::Int(1)).unwrap();
        let mut trace = Vec::new();
        let mut cx = StepCx::new(ms(10), ms(10), &mut trace);
        let stall = b.step(&Closed, &mut cx).unwrap();
        assert_eq!(stall, Stall::Ports { tag: Tag::at(ms(10)), ports: vec![0], wake: None });
        let msg = Message {
            tag: Tag::at(ms(20)),
            sent: Tag::at(ms(20)),
            payload: Payload::Update(Update { write: "x".into(), value: Datum::Int(3), origin: Tag::at(ms(20)), bank: 0 }),
            send_id: 0,
        };
        b.deliver(0, msg, ms(21), Tag::NEG_INF, &mut cx).unwrap();
        assert_eq!(b.step(&Open, &mut cx).unwrap(), Stall::Idle);
        assert_eq!(b.replica().unwrap().balance(), 4);
    }

    #[test]
    fn late_message_is_tardy_or_violation() {
        let spec = pair();
        let msg = Message {
            tag: Tag::at(ms(1)),
            sent: Tag::at(ms(1)),
            payload: Payload::Update(Update { write: "x".into(), value: Datum::Int(3), origin: Tag::at(ms(1)), bank: 0 }),
            send_id: 0,
        };
        for policy in [TardyPolicy::Handle, TardyPolicy::Violation] {
            let mut b = engine(&spec, 1, policy);
            b.schedule_stimulus(0, ms(10), Tag::NEG_INF, None, Datum::Int(1)).unwrap();
            let mut trace = Vec::new();
            let mut cx = StepCx::new(ms(10), ms(10), &mut trace);
            b.step(&Open, &mut cx).unwrap();
            let out = b.deliver(0, msg.clone(), ms(12), Tag::NEG_INF, &mut cx);
            match policy {
                TardyPolicy::Handle => {
                    assert_eq!(out.unwrap(), Delivery::Tardy);
                    assert_eq!(b.tardy_count(), 1);
                    assert_eq!(b.replica().unwrap().balance(), 4);
                    let t = trace.iter().find(|r| r.kind == RecordKind::Tardy).unwrap();
                    assert_eq!(t.origin, Some(Tag::at(ms(1))));
                    assert_eq!(t.tag, Tag::at(ms(10)));
                }
                TardyPolicy::Violation => assert!(matches!(out, Err(EngineError::ProtocolViolation(_)))),
            }
        }
    }

    #[test]
    fn stimulus_tags_strictly_increase() {
        let spec = pair();
        let mut a = engine(&spec, 0, TardyPolicy::Handle);
        let t1 = a.schedule_stimulus(0, ms(5), Tag::NEG_INF, None, Datum::Int(1)).unwrap().unwrap();
        let t2 = a.schedule_stimulus(0, ms(5), Tag::NEG_INF, None, Datum::Int(1)).unwrap().unwrap();
        let t3 = a.schedule_stimulus(0, ms(3), Tag::at(ms(7)), None, Datum::Int(1)).unwrap().unwrap();
        assert!(t1 < t2 && t2 < t3);
        assert_eq!(t3, Tag::at(ms(7)));
    }

    #[test]
    fn absent_messages_follow_last_writer() {
        let mut spec = pair();
        spec.federates[0].reactions.push(rx(&["update"], &[], behavior::QUERY));
        let res = spec.resolve().unwrap();
        let mut a = Engine::new(&spec, &res, 0, 0, None, TardyPolicy::Handle).with_absent_messages(true);
        let mut trace = Vec::new();
        let mut cx = StepCx::new(ms(0), ms(0), &mut trace);
        let msg = Message {
            tag: Tag::at(ms(4)),
            sent: Tag::at(ms(4)),
            payload: Payload::Response { state: "s".into(), provenance: vec![] },
            send_id: 0,
        };
        a.deliver(0, msg, ms(4), Tag::NEG_INF, &mut cx).unwrap();
        a.step(&Open, &mut cx).unwrap();
        assert_eq!(cx.outbox.len(), 1);
        assert!(cx.outbox[0].payload.is_none());
        assert_eq!(cx.outbox[0].tag, Tag::at(ms(4)));
    }
}
