//! Static model of a federation and its causality analyses.
//!
//! A federation is a set of federates wired by connections. Each federate
//! declares input and output ports, actions, and an ordered list of reactions.
//! Names inside a federate share one namespace; `startup` is reserved.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maxplus::{self, CycleClass, MaxPlusMatrix, MaxPlusVector};
use crate::timekit::Interval;

pub const STARTUP: &str = "startup";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid federation: {0}")]
    Invalid(String),
    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),
    #[error("unsatisfiable safe-to-advance constraints along {}; split the federates involved so they can advance independently", .cycle.join(" > "))]
    UnsatisfiableSta { cycle: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinationMode {
    Centralized,
    Decentralized,
}

impl fmt::Display for CoordinationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoordinationMode::Centralized => "centralized",
            CoordinationMode::Decentralized => "decentralized",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSpec {
    pub federates: Vec<FederateSpec>,
    #[serde(default)]
    pub connections: Vec<Connection>,
    pub mode: CoordinationMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederateSpec {
    pub name: String,
    /// Priority among simultaneous updates; defaults to the federate's position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<u32>,
    #[serde(default)]
    pub inputs: Vec<InputPort>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub actions: Vec<ActionSpec>,
    #[serde(default)]
    pub reactions: Vec<ReactionSpec>,
    /// Safe-to-advance offset; derived when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sta: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPort {
    pub name: String,
    /// Safe-to-assume-absent offset; derived when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staa: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionSpec {
    pub triggers: Vec<String>,
    #[serde(default)]
    pub effects: Vec<String>,
    pub behavior: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<Deadline>,
    /// Behavior invoked for tardy inputs; the runtime default applies them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_handler: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deadline {
    pub bound: Interval,
    pub handler: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpacingPolicy {
    Drop,
    Replace,
    Defer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ActionKind {
    Logical { min_delay: Interval },
    Physical { min_spacing: Interval, policy: SpacingPolicy },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    pub name: String,
    pub kind: ActionKind,
}

impl ActionSpec {
    pub fn physical(name: &str) -> Self {
        ActionSpec {
            name: name.into(),
            kind: ActionKind::Physical { min_spacing: Interval::ZERO, policy: SpacingPolicy::Defer },
        }
    }

    pub fn is_physical(&self) -> bool {
        matches!(self.kind, ActionKind::Physical { .. })
    }
}

/// A `federate.port` reference.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortRef {
    pub federate: String,
    pub port: String,
}

impl PortRef {
    pub fn new(federate: &str, port: &str) -> Self {
        PortRef { federate: federate.into(), port: port.into() }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.federate, self.port)
    }
}

impl Serialize for PortRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PortRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let (fed, port) = s
            .split_once('.')
            .ok_or_else(|| serde::de::Error::custom(format!("expected `federate.port`, got {s:?}")))?;
        Ok(PortRef::new(fed, port))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Connection {
    pub from: PortRef,
    pub to: PortRef,
    /// Logical delay; `None` keeps the sender's tag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<Interval>,
    /// A physical connection retags at the receiver's clock.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub physical: bool,
}

impl Connection {
    pub fn logical(from: PortRef, to: PortRef, after: Option<Interval>) -> Self {
        Connection { from, to, after, physical: false }
    }

    pub fn physical(from: PortRef, to: PortRef) -> Self {
        Connection { from, to, after: None, physical: true }
    }

    /// The logical delay as an interval, zero when absent.
    pub fn delay(&self) -> Interval {
        self.after.unwrap_or(Interval::ZERO)
    }
}

/// A node inside one federate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Startup,
    Input(usize),
    Output(usize),
    Action(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortNode {
    pub federate: usize,
    pub node: Node,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedReaction {
    pub triggers: Vec<Node>,
    pub effects: Vec<Node>,
}

impl ResolvedReaction {
    pub fn startup_only(&self) -> bool {
        self.triggers.iter().all(|t| *t == Node::Startup)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedConnection {
    pub from: (usize, usize),
    pub to: (usize, usize),
    pub after: Option<Interval>,
    pub physical: bool,
}

/// Index-resolved view of a validated [`FederationSpec`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved {
    pub reactions: Vec<Vec<ResolvedReaction>>,
    pub connections: Vec<ResolvedConnection>,
    /// `(federate, input)` to connection index.
    pub incoming: HashMap<(usize, usize), usize>,
    /// Per federate, per output: connection indices.
    pub outgoing: Vec<Vec<Vec<usize>>>,
}

impl Resolved {
    /// Inputs of `federate` fed by a logical connection.
    pub fn logical_inputs(&self, federate: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .incoming
            .iter()
            .filter(|((f, _), c)| *f == federate && !self.connections[**c].physical)
            .map(|((_, p), _)| *p)
            .collect();
        v.sort_unstable();
        v
    }
}

impl FederationSpec {
    pub fn federate_index(&self, name: &str) -> Option<usize> {
        self.federates.iter().position(|f| f.name == name)
    }

    pub fn bank_of(&self, federate: usize) -> u32 {
        self.federates[federate].bank.unwrap_or(federate as u32)
    }

    pub fn node_name(&self, n: PortNode) -> String {
        let f = &self.federates[n.federate];
        let local = match n.node {
            Node::Startup => STARTUP.to_string(),
            Node::Input(i) => f.inputs[i].name.clone(),
            Node::Output(o) => f.outputs[o].clone(),
            Node::Action(a) => f.actions[a].name.clone(),
        };
        format!("{}.{}", f.name, local)
    }

    /// Validates the spec and resolves names to indices.
    pub fn resolve<'a>(&'a self) -> Result<Resolved, ModelError> {
        let invalid = |m: String| Err(ModelError::Invalid(m));
        let mut seen_feds = BTreeSet::new();
        let mut reactions = Vec::new();
        for f in &self.federates {
            if f.name.is_empty() || f.name.contains('.') || f.name.contains(char::is_whitespace) {
                return invalid(format!("federate name {:?} must be nonempty without dots or spaces", f.name));
            }
            if !seen_feds.insert(f.name.as_str()) {
                return invalid(format!("duplicate federate {:?}", f.name));
            }
            let mut names: HashMap<&str, Node> = HashMap::new();
            let mut declare = |name: &'a str, node: Node| -> Result<(), ModelError> {
                if name == STARTUP || name.is_empty() || name.contains(char::is_whitespace) {
                    return Err(ModelError::Invalid(format!("{}: illegal name {:?}", f.name, name)));
                }
                match names.insert(name, node) {
                    Some(_) => Err(ModelError::Invalid(format!("{}: duplicate name {:?}", f.name, name))),
                    None => Ok(()),
                }
            };
            for (i, p) in f.inputs.iter().enumerate() {
                declare(&p.name, Node::Input(i))?;
                if p.staa.is_some_and(|s| s < Interval::ZERO) {
                    return invalid(format!("{}.{}: staa must be nonnegative", f.name, p.name));
                }
            }
            for (o, p) in f.outputs.iter().enumerate() {
                declare(p, Node::Output(o))?;
            }
            for (a, act) in f.actions.iter().enumerate() {
                declare(&act.name, Node::Action(a))?;
                let bad = match act.kind {
                    ActionKind::Logical { min_delay } => min_delay < Interval::ZERO,
                    ActionKind::Physical { min_spacing, .. } => min_spacing < Interval::ZERO,
                };
                if bad {
                    return invalid(format!("{}.{}: action delays must be nonnegative", f.name, act.name));
                }
            }
            if f.sta.is_some_and(|s| s < Interval::ZERO) {
                return invalid(format!("{}: sta must be nonnegative", f.name));
            }
            let mut resolved = Vec::new();
            for (k, r) in f.reactions.iter().enumerate() {
                let lookup = |n: &str| -> Option<Node> {
                    if n == STARTUP {
                        Some(Node::Startup)
                    } else {
                        names.get(n).copied()
                    }
                };
                let mut triggers = Vec::new();
                for t in &r.triggers {
                    match lookup(t) {
                        Some(n @ (Node::Startup | Node::Input(_) | Node::Action(_))) => triggers.push(n),
                        Some(Node::Output(_)) => return invalid(format!("{} reaction {}: output {t:?} cannot trigger", f.name, k + 1)),
                        None => return invalid(format!("{} reaction {}: unknown trigger {t:?}", f.name, k + 1)),
                    }
                }
                if triggers.is_empty() {
                    return invalid(format!("{} reaction {}: no triggers", f.name, k + 1));
                }
                let mut effects = Vec::new();
                for e in &r.effects {
                    match lookup(e) {
                        Some(n @ (Node::Output(_) | Node::Action(_))) => effects.push(n),
                        Some(_) => return invalid(format!("{} reaction {}: {e:?} cannot be an effect", f.name, k + 1)),
                        None => return invalid(format!("{} reaction {}: unknown effect {e:?}", f.name, k + 1)),
                    }
                }
                if effects.iter().any(|e| triggers.contains(e)) {
                    return invalid(format!("{} reaction {}: effects overlap triggers", f.name, k + 1));
                }
                if r.deadline.as_ref().is_some_and(|d| d.bound < Interval::ZERO) {
                    return invalid(format!("{} reaction {}: deadline must be nonnegative", f.name, k + 1));
                }
                resolved.push(ResolvedReaction { triggers, effects });
            }
            reactions.push(resolved);
        }

        let mut connections = Vec::new();
        let mut incoming = HashMap::new();
        let mut outgoing: Vec<Vec<Vec<usize>>> =
            self.federates.iter().map(|f| vec![Vec::new(); f.outputs.len()]).collect();
        for (c, conn) in self.connections.iter().enumerate() {
            let find = |r: &PortRef| -> Result<usize, ModelError> {
                self.federate_index(&r.federate)
                    .ok_or_else(|| ModelError::Invalid(format!("connection {c}: unknown federate {:?}", r.federate)))
            };
            let sf = find(&conn.from)?;
            let df = find(&conn.to)?;
            let so = self.federates[sf]
                .outputs
                .iter()
                .position(|o| *o == conn.from.port)
                .ok_or_else(|| ModelError::Invalid(format!("connection {c}: {} is not an output", conn.from)))?;
            let di = self.federates[df]
                .inputs
                .iter()
                .position(|p| p.name == conn.to.port)
                .ok_or_else(|| ModelError::Invalid(format!("connection {c}: {} is not an input", conn.to)))?;
            if sf == df {
                return invalid(format!("connection {c}: {} connects a federate to itself", conn.from));
            }
            if conn.physical && conn.after.is_some() {
                return invalid(format!("connection {c}: physical connections take no logical delay"));
            }
            if conn.after.is_some_and(|a| a < Interval::ZERO) {
                return invalid(format!("connection {c}: negative after delay"));
            }
            if incoming.insert((df, di), c).is_some() {
                return invalid(format!("input {} has more than one incoming connection", conn.to));
            }
            outgoing[sf][so].push(c);
            connections.push(ResolvedConnection { from: (sf, so), to: (df, di), after: conn.after, physical: conn.physical });
        }
        Ok(Resolved { reactions, connections, incoming, outgoing })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Reaction,
    Connection,
    PhysicalConnection,
}

/// An edge of the counterfactual cause graph. `delay: None` keeps the tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CauseEdge {
    pub from: PortNode,
    pub to: PortNode,
    pub delay: Option<Interval>,
    pub kind: EdgeKind,
}

/// Tag relation under which a source can affect a sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Influence {
    EqualTag,
    LaterTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InfluenceEdge {
    pub from: PortNode,
    pub to: PortNode,
    pub relation: Influence,
}

fn connection_edges(res: &Resolved) -> Vec<CauseEdge> {
    res.connections
        .iter()
        .map(|c| CauseEdge {
            from: PortNode { federate: c.from.0, node: Node::Output(c.from.1) },
            to: PortNode { federate: c.to.0, node: Node::Input(c.to.1) },
            delay: c.after,
            kind: if c.physical { EdgeKind::PhysicalConnection } else { EdgeKind::Connection },
        })
        .collect()
}

/// Edges from each trigger to each effect of the same reaction, plus connections.
///
/// Scheduling a logical action contributes its minimum delay; physical actions
/// start new causal chains and get no incoming logical edge.
pub fn counterfactual_cause_graph(spec: &FederationSpec) -> Result<Vec<CauseEdge>, ModelError> {
    let res = spec.resolve()?;
    Ok(cause_edges(spec, &res))
}

pub(crate) fn cause_edges(spec: &FederationSpec, res: &Resolved) -> Vec<CauseEdge> {
    let mut edges = Vec::new();
    for (f, reactions) in res.reactions.iter().enumerate() {
        for r in reactions {
            for &t in &r.triggers {
                for &e in &r.effects {
                    let delay = match e {
                        Node::Action(a) => match spec.federates[f].actions[a].kind {
                            ActionKind::Logical { min_delay } => Some(min_delay),
                            ActionKind::Physical { .. } => continue,
                        },
                        _ => None,
                    };
                    edges.push(CauseEdge {
                        from: PortNode { federate: f, node: t },
                        to: PortNode { federate: f, node: e },
                        delay,
                        kind: EdgeKind::Reaction,
                    });
                }
            }
        }
    }
    edges.extend(connection_edges(res));
    edges
}

/// Counterfactual edges plus state-sharing edges: a trigger of reaction `k`
/// influences effects of reactions `k' >= k` at the same tag and effects of
/// earlier reactions only at later tags.
pub fn influence_graph(spec: &FederationSpec) -> Result<Vec<InfluenceEdge>, ModelError> {
    let res = spec.resolve()?;
    let mut set: BTreeMap<(PortNode, PortNode), Influence> = BTreeMap::new();
    let mut add = |from, to, rel| {
        let entry = set.entry((from, to)).or_insert(rel);
        *entry = (*entry).min(rel);
    };
    for e in cause_edges(spec, &res) {
        let rel = match (e.kind, e.delay) {
            (EdgeKind::PhysicalConnection, _) | (_, Some(_)) => Influence::LaterTag,
            _ => Influence::EqualTag,
        };
        add(e.from, e.to, rel);
    }
    for (f, reactions) in res.reactions.iter().enumerate() {
        for (k, r) in reactions.iter().enumerate() {
            for &t in &r.triggers {
                for (k2, r2) in reactions.iter().enumerate() {
                    for &e in &r2.effects {
                        let rel = if k2 >= k { Influence::EqualTag } else { Influence::LaterTag };
                        add(PortNode { federate: f, node: t }, PortNode { federate: f, node: e }, rel);
                    }
                }
            }
        }
    }
    Ok(set.into_iter().map(|((from, to), relation)| InfluenceEdge { from, to, relation }).collect())
}

/// `D_ij`: the smallest summed logical delay over counterfactual paths from an
/// output of federate `j` to an input of federate `i`; `inf` when no path exists.
/// The diagonal is zero.
pub fn logical_delay_matrix(spec: &FederationSpec) -> Result<MaxPlusMatrix, ModelError> {
    let res = spec.resolve()?;
    let edges: Vec<CauseEdge> =
        cause_edges(spec, &res).into_iter().filter(|e| e.kind != EdgeKind::PhysicalConnection).collect();
    let n = spec.federates.len();
    let mut adj: HashMap<PortNode, Vec<(PortNode, Interval)>> = HashMap::new();
    for e in &edges {
        adj.entry(e.from).or_default().push((e.to, e.delay.unwrap_or(Interval::ZERO)));
    }
    let mut d = MaxPlusMatrix::filled(n, Interval::INF);
    for j in 0..n {
        let mut dist: HashMap<PortNode, Interval> = HashMap::new();
        let mut queue = VecDeque::new();
        for o in 0..spec.federates[j].outputs.len() {
            let node = PortNode { federate: j, node: Node::Output(o) };
            dist.insert(node, Interval::ZERO);
            queue.push_back(node);
        }
        // Label-correcting search; delays are nonnegative so this terminates.
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            for &(v, w) in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
                let dv = du.checked_add(w).unwrap_or(Interval::INF);
                if dist.get(&v).is_none_or(|cur| dv < *cur) {
                    dist.insert(v, dv);
                    queue.push_back(v);
                }
            }
        }
        for (node, dv) in dist {
            if let Node::Input(_) = node.node {
                if node.federate != j && dv < d.get(node.federate, j) {
                    d.set(node.federate, j, dv);
                }
            }
        }
        d.set(j, j, Interval::ZERO);
    }
    Ok(d)
}

/// Per-federate, per-reaction execution-time bounds; missing entries are zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecBounds(pub Vec<Vec<Interval>>);

impl ExecBounds {
    pub fn get(&self, federate: usize, reaction: usize) -> Interval {
        self.0.get(federate).and_then(|r| r.get(reaction)).copied().unwrap_or(Interval::ZERO)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivedOffsets {
    pub sta: Vec<Interval>,
    /// `(federate, input)` for every logically connected network input.
    pub staa: BTreeMap<(usize, usize), Interval>,
}

impl DerivedOffsets {
    pub fn staa_of(&self, federate: usize, input: usize) -> Interval {
        self.staa.get(&(federate, input)).copied().unwrap_or(Interval::ZERO)
    }

    pub fn render(&self, spec: &FederationSpec) -> String {
        let mut out = String::from("federate            STA\n");
        for (i, f) in spec.federates.iter().enumerate() {
            out.push_str(&format!("{:<20}{}\n", f.name, self.sta[i]));
        }
        out.push_str("port                STAA\n");
        for ((f, p), v) in &self.staa {
            let name = format!("{}.{}", spec.federates[*f].name, spec.federates[*f].inputs[*p].name);
            out.push_str(&format!("{name:<20}{v}\n"));
        }
        out
    }
}

/// Sources reaching `target` backwards, and whether any path carries a logical delay.
fn roots_of(edges: &[CauseEdge], target: PortNode, spec: &FederationSpec) -> (BTreeSet<PortNode>, bool) {
    let mut rev: HashMap<PortNode, Vec<&CauseEdge>> = HashMap::new();
    for e in edges {
        rev.entry(e.to).or_default().push(e);
    }
    let mut roots = BTreeSet::new();
    let mut delayed = false;
    let mut seen = BTreeSet::from([target]);
    let mut stack = vec![target];
    while let Some(u) = stack.pop() {
        let is_source = match u.node {
            Node::Startup => true,
            Node::Action(a) => spec.federates[u.federate].actions[a].is_physical(),
            _ => false,
        };
        let preds = rev.get(&u).map(Vec::as_slice).unwrap_or(&[]);
        if is_source || preds.is_empty() {
            if u != target {
                roots.insert(u);
            }
            if is_source {
                continue;
            }
        }
        for e in preds {
            if e.kind == EdgeKind::PhysicalConnection {
                roots.insert(e.to);
                continue;
            }
            if e.delay.is_some() {
                delayed = true;
            }
            if seen.insert(e.from) {
                stack.push(e.from);
            }
        }
    }
    (roots, delayed)
}

fn has_zero_delay_cycle(edges: &[CauseEdge]) -> Option<PortNode> {
    let mut adj: HashMap<PortNode, Vec<PortNode>> = HashMap::new();
    for e in edges.iter().filter(|e| e.delay.is_none() && e.kind != EdgeKind::PhysicalConnection) {
        adj.entry(e.from).or_default().push(e.to);
    }
    // Iterative three-color depth-first search.
    let mut color: HashMap<PortNode, u8> = HashMap::new();
    let mut starts: Vec<PortNode> = adj.keys().copied().collect();
    starts.sort();
    for s in starts {
        if color.contains_key(&s) {
            continue;
        }
        let mut stack = vec![(s, 0usize)];
        color.insert(s, 1);
        while let Some((u, i)) = stack.pop() {
            let next = adj.get(&u).and_then(|v| v.get(i)).copied();
            match next {
                Some(v) => {
                    stack.push((u, i + 1));
                    match color.get(&v) {
                        Some(1) => return Some(v),
                        Some(_) => {}
                        None => {
                            color.insert(v, 1);
                            stack.push((v, 0));
                        }
                    }
                }
                None => {
                    color.insert(u, 2);
                }
            }
        }
    }
    None
}

/// Least safe-to-advance and safe-to-assume-absent offsets for decentralized execution.
///
/// Quantities are measured relative to the timestamp of the tag in question:
/// `B_p` bounds when a message with tag `g` reaches network input `p`, a
/// federate advances to `g` at `STA`, and a reaction gated on `p` runs once
/// `max(STA, B_p)` has passed. The constraints form a max-plus system solved
/// with [`maxplus::kleene_star`]; a positive cycle means no finite offsets exist.
///
/// `latency_bounds[i][j]` and `clock_error_bounds[i][j]` describe traffic from `j` to `i`.
pub fn derive_offsets(
    spec: &FederationSpec,
    latency_bounds: &MaxPlusMatrix,
    clock_error_bounds: &MaxPlusMatrix,
    exec_bounds: &ExecBounds,
) -> Result<DerivedOffsets, ModelError> {
    let res = spec.resolve()?;
    let n = spec.federates.len();
    if latency_bounds.n() != n || clock_error_bounds.n() != n {
        return Err(ModelError::Invalid(format!("bound matrices must be {n}x{n}")));
    }
    let edges = cause_edges(spec, &res);
    if let Some(node) = has_zero_delay_cycle(&edges) {
        return Err(ModelError::UnsupportedTopology(format!(
            "zero-delay causality cycle through {}",
            spec.node_name(node)
        )));
    }

    // Variables: STA per federate, then arrival bound B per logical network input.
    let ports: Vec<(usize, usize)> = (0..n).flat_map(|f| res.logical_inputs(f).into_iter().map(move |p| (f, p))).collect();
    let var_of_port: HashMap<(usize, usize), usize> = ports.iter().enumerate().map(|(k, p)| (*p, n + k)).collect();
    let v = n + ports.len();
    let mut m = MaxPlusMatrix::empty(v);
    let z = MaxPlusVector::new((0..v).map(|k| if k < n { Interval::ZERO } else { Interval::NEG_INF }).collect());
    let raise = |m: &mut MaxPlusMatrix, i: usize, j: usize, w: Interval| {
        if w > m.get(i, j) {
            m.set(i, j, w);
        }
    };

    for &(i, p) in &ports {
        let bp = var_of_port[&(i, p)];
        let conn = &res.connections[res.incoming[&(i, p)]];
        let (j, o) = conn.from;
        let link = latency_bounds
            .get(i, j)
            .checked_add(clock_error_bounds.get(i, j))
            .and_then(|x| x.checked_sub(conn.after.unwrap_or(Interval::ZERO)))
            .map_err(|e| ModelError::Invalid(format!("bounds for {}->{}: {e}", spec.federates[j].name, spec.federates[i].name)))?;
        let reactions = &res.reactions[j];
        for (k, r) in reactions.iter().enumerate() {
            if !r.effects.contains(&Node::Output(o)) {
                continue;
            }
            let exec = (0..=k)
                .filter(|k2| !reactions[*k2].startup_only())
                .fold(Interval::ZERO, |acc, k2| acc.checked_add(exec_bounds.get(j, k2)).unwrap_or(Interval::INF));
            let w = maxplus::otimes(exec, link);
            raise(&mut m, bp, j, w);
            for r2 in &reactions[..=k] {
                for t in &r2.triggers {
                    if let Node::Input(q) = t {
                        if let Some(&bq) = var_of_port.get(&(j, *q)) {
                            raise(&mut m, bp, bq, w);
                        }
                    }
                }
            }
        }
        let target = PortNode { federate: i, node: Node::Input(p) };
        let (roots, delayed) = roots_of(&edges, target, spec);
        let physical_actions = spec.federates[i].actions.iter().filter(|a| a.is_physical()).count();
        let self_rooted = !roots.is_empty()
            && !delayed
            && physical_actions == 1
            && roots.iter().all(|r| r.federate == i && matches!(r.node, Node::Action(_)));
        if !self_rooted {
            raise(&mut m, i, bp, Interval::ZERO);
        }
    }

    if maxplus::classify_cycles(&m) == CycleClass::Positive {
        let witness = maxplus::positive_cycle(&m).expect("positive class has a witness");
        let mut cycle: Vec<String> = Vec::new();
        // Edges run from dependency to dependent, so reverse for "greater than" order.
        for &node in witness.nodes.iter().rev() {
            if node < n {
                cycle.push(format!("STA({})", spec.federates[node].name));
            }
        }
        if let Some(first) = cycle.first().cloned() {
            cycle.push(first);
        }
        return Err(ModelError::UnsatisfiableSta { cycle });
    }
    let star = maxplus::kleene_star(&m).map_err(|e| ModelError::Invalid(e.to_string()))?;
    let x = maxplus::mp_mat_vec(&star, &z).map_err(|e| ModelError::Invalid(e.to_string()))?;
    let sta: Vec<Interval> = (0..n).map(|i| x.get(i).max(Interval::ZERO)).collect();
    let mut staa = BTreeMap::new();
    for &(i, p) in &ports {
        let b = x.get(var_of_port[&(i, p)]);
        let s = if b.is_neg_inf() { Interval::ZERO } else { b.checked_sub(sta[i]).unwrap_or(Interval::INF).max(Interval::ZERO) };
        staa.insert((i, p), s);
    }
    Ok(DerivedOffsets { sta, staa })
}
