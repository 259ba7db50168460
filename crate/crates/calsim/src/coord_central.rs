//! Centralized coordination through a runtime infrastructure node (RTI).
//!
//! Federates report their next event tag (NET), completed tags (LTC) and, for
//! federates with physical inputs, time advance notices (TAN). The RTI routes
//! every tagged message and grants tag advances (TAG), or provisional grants
//! (PTAG) on zero-delay cycles, once no earlier message can still arrive.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::engine::{Gate, Payload, Wait};
use crate::fedmodel::{ActionKind, FederationSpec, ModelError, Node, Resolved};
use crate::timekit::{tag_delay, Interval, Tag, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoordMessage {
    NextEventTag(usize, Tag),
    TagAdvanceGrant(Tag),
    ProvisionalTagAdvanceGrant(Tag),
    TimeAdvanceNotice(usize, Timestamp),
    TaggedMessage { conn: usize, tag: Tag, sent: Tag, payload: Payload, send_id: u64 },
    AbsentMessage { conn: usize, tag: Tag },
    LogicalTagComplete(usize, Tag),
}

impl CoordMessage {
    /// Short name used in trace records.
    pub fn name(&self) -> &'static str {
        match self {
            CoordMessage::NextEventTag(..) => "NET",
            CoordMessage::TagAdvanceGrant(_) => "TAG",
            CoordMessage::ProvisionalTagAdvanceGrant(_) => "PTAG",
            CoordMessage::TimeAdvanceNotice(..) => "TAN",
            CoordMessage::TaggedMessage { .. } => "MSG",
            CoordMessage::AbsentMessage { .. } => "ABS",
            CoordMessage::LogicalTagComplete(..) => "LTC",
        }
    }

    /// The tag the message speaks about.
    pub fn tag(&self) -> Tag {
        match self {
            CoordMessage::NextEventTag(_, t)
            | CoordMessage::TagAdvanceGrant(t)
            | CoordMessage::ProvisionalTagAdvanceGrant(t)
            | CoordMessage::LogicalTagComplete(_, t) => *t,
            CoordMessage::TimeAdvanceNotice(_, ts) => Tag::at(*ts),
            CoordMessage::TaggedMessage { tag, .. } | CoordMessage::AbsentMessage { tag, .. } => *tag,
        }
    }
}

impl fmt::Display for CoordMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.name(), self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CentralError {
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn delay_by(t: Tag, d: Interval) -> Tag {
    if d == Interval::ZERO {
        t
    } else {
        tag_delay(t, d).unwrap_or(Tag::INF)
    }
}

fn through(t: Tag, after: Option<Interval>) -> Tag {
    t.delayed(after).unwrap_or(Tag::INF)
}

/// Least logical delay from each input to each output inside one federate.
fn internal_paths(spec: &FederationSpec, res: &Resolved, f: usize) -> Vec<Vec<Option<Interval>>> {
    let fed = &spec.federates[f];
    let action_delay = |a: usize| match fed.actions[a].kind {
        ActionKind::Logical { min_delay } => min_delay,
        ActionKind::Physical { .. } => Interval::ZERO,
    };
    (0..fed.inputs.len())
        .map(|q| {
            let mut dist: BTreeMap<Node, Interval> = BTreeMap::new();
            dist.insert(Node::Input(q), Interval::ZERO);
            let mut changed = true;
            while changed {
                changed = false;
                for r in &res.reactions[f] {
                    let Some(from) = r.triggers.iter().filter_map(|t| dist.get(t)).min().copied() else {
                        continue;
                    };
                    for e in &r.effects {
                        let d = match e {
                            Node::Action(a) => from.checked_add(action_delay(*a)).unwrap_or(Interval::INF),
                            _ => from,
                        };
                        if dist.get(e).is_none_or(|x| d < *x) {
                            dist.insert(*e, d);
                            changed = true;
                        }
                    }
                }
            }
            (0..fed.outputs.len()).map(|o| dist.get(&Node::Output(o)).copied()).collect()
        })
        .collect()
}

/// Federates on a cycle of undelayed logical connections.
fn zero_delay_cycle_members(res: &Resolved, n: usize) -> Vec<bool> {
    let mut adj = vec![BTreeSet::new(); n];
    for c in &res.connections {
        if !c.physical && c.after.is_none() {
            adj[c.from.0].insert(c.to.0);
        }
    }
    (0..n)
        .map(|s| {
            let mut seen = BTreeSet::new();
            let mut stack: Vec<usize> = adj[s].iter().copied().collect();
            while let Some(v) = stack.pop() {
                if v == s {
                    return true;
                }
                if seen.insert(v) {
                    stack.extend(adj[v].iter().copied());
                }
            }
            false
        })
        .collect()
}

/// Per-federate bookkeeping at the RTI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FederateRecord {
    pub next_event: Tag,
    pub completed: Tag,
    pub tan: Option<Timestamp>,
    pub granted: Tag,
    pub provisional: bool,
    pub has_physical: bool,
    forwarded: BTreeMap<Tag, usize>,
}

#[derive(Debug, Clone)]
pub struct Rti {
    feds: Vec<FederateRecord>,
    conns: Vec<(usize, usize, usize, usize, Option<Interval>, bool)>,
    inputs: Vec<Vec<(usize, usize)>>,
    outputs: Vec<usize>,
    internal: Vec<Vec<Vec<Option<Interval>>>>,
    on_cycle: Vec<bool>,
    channel_last: Vec<Tag>,
    channel_closed: Vec<Tag>,
    absent_sent: BTreeSet<(usize, Tag)>,
}

impl Rti {
    pub fn new(spec: &FederationSpec) -> Result<Rti, CentralError> {
        let res = spec.resolve()?;
        let n = spec.federates.len();
        let feds = (0..n)
            .map(|f| {
                let fed = &spec.federates[f];
                let physical_input = res.incoming.iter().any(|((g, _), c)| *g == f && res.connections[*c].physical);
                FederateRecord {
                    next_event: Tag::ZERO,
                    completed: Tag::NEG_INF,
                    tan: None,
                    granted: Tag::NEG_INF,
                    provisional: false,
                    has_physical: physical_input || fed.actions.iter().any(|a| a.is_physical()),
                    forwarded: BTreeMap::new(),
                }
            })
            .collect();
        let conns = res.connections.iter().map(|c| (c.from.0, c.from.1, c.to.0, c.to.1, c.after, c.physical)).collect();
        let inputs = (0..n)
            .map(|f| res.logical_inputs(f).into_iter().map(|q| (q, res.incoming[&(f, q)])).collect())
            .collect();
        Ok(Rti {
            feds,
            conns,
            inputs,
            outputs: spec.federates.iter().map(|f| f.outputs.len()).collect(),
            internal: (0..n).map(|f| internal_paths(spec, &res, f)).collect(),
            on_cycle: zero_delay_cycle_members(&res, n),
            channel_last: vec![Tag::NEG_INF; res.connections.len()],
            channel_closed: vec![Tag::NEG_INF; res.connections.len()],
            absent_sent: BTreeSet::new(),
        })
    }

    pub fn federate(&self, f: usize) -> &FederateRecord {
        &self.feds[f]
    }

    /// Whether `f` needs grants at all.
    pub fn has_upstream(&self, f: usize) -> bool {
        !self.inputs[f].is_empty()
    }

    pub fn on_zero_delay_cycle(&self, f: usize) -> bool {
        self.on_cycle[f]
    }

    /// Earliest tag at which `j` may still produce an event.
    fn lower_bound(&self, j: usize) -> Tag {
        let r = &self.feds[j];
        let mut lb = r.next_event;
        if r.has_physical {
            let floor = match r.tan {
                None => Tag::ZERO,
                Some(t) if !t.is_finite() => Tag::INF,
                Some(t) => Tag::at(t.plus(Interval::from_ns(1))),
            };
            lb = lb.min(floor);
        }
        if let Some(t) = r.forwarded.keys().next() {
            lb = lb.min(*t);
        }
        lb.max(r.completed.successor())
    }

    /// Earliest tag that may still arrive on each connection.
    pub fn input_bounds(&self) -> Vec<Tag> {
        let n = self.feds.len();
        let mut eo: Vec<Vec<Tag>> = (0..n).map(|j| vec![self.lower_bound(j); self.outputs[j]]).collect();
        let mut ib = vec![Tag::INF; self.conns.len()];
        let limit = self.conns.len() + n + 2;
        for _ in 0..limit * limit.max(1) {
            let mut changed = false;
            for (c, &(sf, so, _, _, after, physical)) in self.conns.iter().enumerate() {
                if !physical {
                    ib[c] = through(eo[sf][so], after).max(self.channel_closed[c].successor());
                }
            }
            for (j, ins) in self.inputs.iter().enumerate() {
                for &(q, c) in ins {
                    for (o, d) in self.internal[j][q].iter().enumerate() {
                        let Some(d) = d else { continue };
                        let cand = delay_by(ib[c], *d).max(self.feds[j].completed.successor());
                        if cand < eo[j][o] {
                            eo[j][o] = cand;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        ib
    }

    /// Earliest incoming message tag for each federate.
    pub fn eimt(&self) -> Vec<Tag> {
        let ib = self.input_bounds();
        self.inputs.iter().map(|ins| ins.iter().map(|&(_, c)| ib[c]).min().unwrap_or(Tag::INF)).collect()
    }

    fn request(&self, i: usize) -> Tag {
        let r = &self.feds[i];
        r.forwarded.keys().next().map_or(r.next_event, |t| r.next_event.min(*t))
    }

    /// Federates holding back `i`'s next grant.
    pub fn waits_for(&self, i: usize) -> Vec<usize> {
        let req = self.request(i);
        let mut v: Vec<usize> = self.inputs[i]
            .iter()
            .map(|&(_, c)| self.conns[c].0)
            .filter(|&j| self.lower_bound(j) <= req)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Processes one message from federate `from`; returns messages to send.
    pub fn handle(&mut self, from: usize, msg: CoordMessage) -> Result<Vec<(usize, CoordMessage)>, CentralError> {
        let mut out = Vec::new();
        let violation = |m: String| Err(CentralError::ProtocolViolation(m));
        match msg {
            CoordMessage::NextEventTag(f, t) => {
                let r = &mut self.feds[f];
                if t <= r.completed {
                    return violation(format!("federate {f} reported next event {t} at or below completed {}", r.completed));
                }
                r.next_event = t;
            }
            CoordMessage::LogicalTagComplete(f, t) => {
                let r = &mut self.feds[f];
                if t < r.completed {
                    return violation(format!("federate {f} completed {t} after {}", r.completed));
                }
                r.completed = t;
                r.forwarded = r.forwarded.split_off(&t.successor());
            }
            CoordMessage::TimeAdvanceNotice(f, ts) => {
                let r = &mut self.feds[f];
                if r.tan.is_some_and(|p| ts <= p) {
                    return violation(format!("federate {f} time advance notice {ts} does not increase"));
                }
                r.tan = Some(ts);
            }
            CoordMessage::TaggedMessage { conn, tag, sent, payload, send_id } => {
                let (sf, _, df, _, _, physical) = self.conns[conn];
                if sf != from {
                    return violation(format!("federate {from} sent on a channel of federate {sf}"));
                }
                if tag < self.channel_last[conn] {
                    return violation(format!("channel {conn} went back from {} to {tag}", self.channel_last[conn]));
                }
                self.channel_last[conn] = tag;
                if !physical {
                    *self.feds[df].forwarded.entry(tag).or_insert(0) += 1;
                }
                out.push((df, CoordMessage::TaggedMessage { conn, tag, sent, payload, send_id }));
            }
            CoordMessage::AbsentMessage { conn, tag } => {
                let (sf, _, df, _, _, _) = self.conns[conn];
                if sf != from {
                    return violation(format!("federate {from} sent on a channel of federate {sf}"));
                }
                if tag < self.channel_last[conn] {
                    return violation(format!("channel {conn} went back from {} to {tag}", self.channel_last[conn]));
                }
                self.channel_last[conn] = tag;
                self.channel_closed[conn] = self.channel_closed[conn].max(tag);
                out.push((df, CoordMessage::AbsentMessage { conn, tag }));
            }
            CoordMessage::TagAdvanceGrant(_)
            | CoordMessage::ProvisionalTagAdvanceGrant(_) => {
                return violation(format!("federate {from} sent {}", msg.name()));
            }
        }
        self.grants(&mut out);
        Ok(out)
    }

    fn grants(&mut self, out: &mut Vec<(usize, CoordMessage)>) {
        let ib = self.input_bounds();
        for i in 0..self.feds.len() {
            if self.inputs[i].is_empty() {
                continue;
            }
            let req = self.request(i);
            if req == Tag::INF {
                continue;
            }
            let eimt = self.inputs[i].iter().map(|&(_, c)| ib[c]).min().unwrap_or(Tag::INF);
            let r = &mut self.feds[i];
            if eimt > req {
                if r.granted < req || (r.granted == req && r.provisional) {
                    r.granted = req;
                    r.provisional = false;
                    out.push((i, CoordMessage::TagAdvanceGrant(req)));
                }
            } else if eimt == req && self.on_cycle[i] && r.granted < req {
                r.granted = req;
                r.provisional = true;
                out.push((i, CoordMessage::ProvisionalTagAdvanceGrant(req)));
            }
            let r = &self.feds[i];
            if r.provisional {
                let g = r.granted;
                for &(_, c) in &self.inputs[i] {
                    if ib[c] > g && self.channel_last[c] < g && self.absent_sent.insert((c, g)) {
                        out.push((i, CoordMessage::AbsentMessage { conn: c, tag: g }));
                    }
                }
            }
        }
    }
}

/// Gate for one federate under centralized coordination.
#[derive(Debug, Clone, Copy)]
pub struct CentralGate {
    pub clock: Timestamp,
    pub has_upstream: bool,
    pub granted: Tag,
    pub provisional: bool,
}

impl Gate for CentralGate {
    fn advance(&self, tag: Tag) -> Wait {
        if self.clock < tag.time() {
            return Wait::Until(tag.time());
        }
        if !self.has_upstream || tag <= self.granted {
            Wait::Ready
        } else {
            Wait::Blocked
        }
    }

    fn port(&self, _: usize, tag: Tag) -> Wait {
        if !self.has_upstream || tag < self.granted || (tag == self.granted && !self.provisional) {
            Wait::Ready
        } else {
            Wait::Blocked
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedmodel::{ActionSpec, Connection, CoordinationMode, FederateSpec, InputPort, PortRef, ReactionSpec};

    fn ms(v: i64) -> Timestamp {
        Timestamp::from_ms(v)
    }

    fn fed(name: &str, physical: bool, relay: bool) -> FederateSpec {
        let mut reactions = vec![ReactionSpec {
            triggers: vec!["in".into()],
            effects: if relay { vec!["out".into()] } else { vec![] },
            behavior: "relay".into(),
            deadline: None,
            fault_handler: None,
        }];
        if physical {
            reactions.push(ReactionSpec {
                triggers: vec!["op".into()],
                effects: vec!["out".into()],
                behavior: "submit".into(),
                deadline: None,
                fault_handler: None,
            });
        }
        FederateSpec {
            name: name.into(),
            bank: None,
            inputs: vec![InputPort { name: "in".into(), staa: None }],
            outputs: vec!["out".into()],
            actions: if physical { vec![ActionSpec::physical("op")] } else { vec![] },
            reactions,
            sta: None,
        }
    }

    fn spec(feds: Vec<FederateSpec>, links: &[(&str, &str, Option<Interval>)]) -> FederationSpec {
        FederationSpec {
            federates: feds,
            connections: links
                .iter()
                .map(|(a, b, d)| Connection::logical(PortRef::new(a, "out"), PortRef::new(b, "in"), *d))
                .collect(),
            mode: CoordinationMode::Centralized,
        }
    }

    fn grants(out: &[(usize, CoordMessage)], f: usize) -> Vec<CoordMessage> {
        out.iter()
            .filter(|(d, m)| *d == f && matches!(m, CoordMessage::TagAdvanceGrant(_) | CoordMessage::ProvisionalTagAdvanceGrant(_)))
            .map(|(_, m)| m.clone())
            .collect()
    }

    #[test]
    fn federate_without_upstream_needs_no_grant() {
        let s = spec(vec![fed("a", false, false), fed("b", false, false)], &[("a", "b", None)]);
        let rti = Rti::new(&s).unwrap();
        assert!(!rti.has_upstream(0));
        let gate = CentralGate { clock: ms(5), has_upstream: false, granted: Tag::NEG_INF, provisional: false };
        assert_eq!(gate.advance(Tag::at(ms(5))), Wait::Ready);
        assert_eq!(gate.advance(Tag::at(ms(6))), Wait::Until(ms(6)));
    }

    #[test]
    fn tan_unblocks_downstream() {
        let s = spec(vec![fed("a", true, false), fed("b", false, false)], &[("a", "b", None)]);
        let mut rti = Rti::new(&s).unwrap();
        rti.handle(0, CoordMessage::NextEventTag(0, Tag::INF)).unwrap();
        let out = rti.handle(1, CoordMessage::NextEventTag(1, Tag::at(ms(40)))).unwrap();
        assert!(grants(&out, 1).is_empty());
        let out = rti.handle(0, CoordMessage::TimeAdvanceNotice(0, ms(40))).unwrap();
        assert_eq!(grants(&out, 1), vec![CoordMessage::TagAdvanceGrant(Tag::at(ms(40)))]);
    }

    #[test]
    fn after_delay_extends_grant() {
        let s = spec(vec![fed("a", false, false), fed("b", false, false)], &[("a", "b", Some(Interval::from_ms(10)))]);
        let mut rti = Rti::new(&s).unwrap();
        rti.handle(0, CoordMessage::NextEventTag(0, Tag::at(ms(5)))).unwrap();
        let out = rti.handle(1, CoordMessage::NextEventTag(1, Tag::at(ms(14)))).unwrap();
        assert_eq!(grants(&out, 1), vec![CoordMessage::TagAdvanceGrant(Tag::at(ms(14)))]);
        let out = rti.handle(1, CoordMessage::NextEventTag(1, Tag::at(ms(15)))).unwrap();
        assert!(grants(&out, 1).is_empty());
    }

    #[test]
    fn zero_delay_cycle_gets_provisional_grants_then_upgrade() {
        let s = spec(vec![fed("a", false, true), fed("b", false, true)], &[("a", "b", None), ("b", "a", None)]);
        let mut rti = Rti::new(&s).unwrap();
        assert!(rti.on_zero_delay_cycle(0) && rti.on_zero_delay_cycle(1));
        let g = Tag::at(ms(10));
        rti.handle(0, CoordMessage::NextEventTag(0, g)).unwrap();
        let out = rti.handle(1, CoordMessage::NextEventTag(1, g)).unwrap();
        assert_eq!(grants(&out, 0), vec![CoordMessage::ProvisionalTagAdvanceGrant(g)]);
        assert_eq!(grants(&out, 1), vec![CoordMessage::ProvisionalTagAdvanceGrant(g)]);
        let out = rti.handle(0, CoordMessage::LogicalTagComplete(0, g)).unwrap();
        assert_eq!(grants(&out, 1), vec![CoordMessage::TagAdvanceGrant(g)]);
        assert!(grants(&out, 0).is_empty());
    }

    #[test]
    fn regressions_are_violations() {
        let s = spec(vec![fed("a", true, false), fed("b", false, false)], &[("a", "b", None)]);
        let mut rti = Rti::new(&s).unwrap();
        rti.handle(0, CoordMessage::TimeAdvanceNotice(0, ms(10))).unwrap();
        assert!(rti.handle(0, CoordMessage::TimeAdvanceNotice(0, ms(10))).is_err());
        rti.handle(0, CoordMessage::LogicalTagComplete(0, Tag::at(ms(10)))).unwrap();
        assert!(rti.handle(0, CoordMessage::LogicalTagComplete(0, Tag::at(ms(9)))).is_err());
        assert!(rti.handle(0, CoordMessage::NextEventTag(0, Tag::at(ms(10)))).is_err());
    }

    #[test]
    fn grant_never_exceeds_upstream_bound() {
        let s = spec(
            vec![fed("a", true, true), fed("b", false, true), fed("c", false, false)],
            &[("a", "b", Some(Interval::from_ms(3))), ("b", "c", None)],
        );
        let mut rti = Rti::new(&s).unwrap();
        let mut sent = Vec::new();
        for (f, m) in [
            (2, CoordMessage::NextEventTag(2, Tag::at(ms(50)))),
            (1, CoordMessage::NextEventTag(1, Tag::INF)),
            (0, CoordMessage::NextEventTag(0, Tag::INF)),
            (0, CoordMessage::TimeAdvanceNotice(0, ms(20))),
            (0, CoordMessage::TimeAdvanceNotice(0, ms(60))),
        ] {
            sent.extend(rti.handle(f, m).unwrap());
            let bound = rti.eimt()[2];
            assert!(rti.federate(2).granted < bound);
        }
        assert_eq!(grants(&sent, 2), vec![CoordMessage::TagAdvanceGrant(Tag::at(ms(50)))]);
    }
}
