//! Ready-to-run federations: replicated ATM, replicated store and bulletin board.

use std::collections::BTreeMap;

use super::{behavior, Datum, MergeOp};
use crate::fedmodel::{
    ActionSpec, Connection, CoordinationMode, FederateSpec, FederationSpec, InputPort, PortRef, ReactionSpec,
};
use crate::simnet::{LinkModel, LinkOverride, Links, SimConfig, Stimulus, RTI};
use crate::timekit::{Interval, Timestamp};

/// Outcome annotations checked by the test suite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expectation {
    /// State of the federate's replica at its last recorded event.
    FinalState { federate: String, state: String },
    /// Hand-derived offsets; unlisted ports are zero.
    Offsets { sta: Vec<(String, Interval)>, staa: Vec<(String, Interval)> },
    /// A read reflects `present` without its cause `missing` for `seed`.
    CausalViolation { missing: String, present: String, seed: u64 },
    CausalPass,
}

/// Parameters of a built-in federation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Replicated bank account. `latency` is end to end; in centralized mode each RTI hop takes half.
    Atm { nodes: usize, latency: Interval, after: Option<Interval>, physical: bool },
    /// Two-replica key with last-writer merges and simultaneous writes from banks 1 and 3.
    Store { op: MergeOp, latency: Interval, jitter: Interval },
    /// Store split into user-input and replica federates.
    FlattenedStore,
    /// Sally, Joe and an observer exchanging posts.
    Bulletin { physical: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioDef {
    pub name: String,
    pub summary: String,
    pub family: Family,
    pub config: SimConfig,
    pub expect: Vec<Expectation>,
}

impl ScenarioDef {
    /// The same federation under another coordination mode.
    pub fn in_mode(&self, mode: CoordinationMode) -> ScenarioDef {
        self.family.build(mode)
    }

    /// Only logical connections, so both modes must agree tag for tag.
    pub fn is_logical(&self) -> bool {
        self.config.federation.connections.iter().all(|c| !c.physical)
    }
}

fn ms(v: i64) -> Interval {
    Interval::from_ms(v)
}

fn at(v: i64) -> Timestamp {
    Timestamp::from_ms(v)
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

fn input(name: &str) -> InputPort {
    InputPort { name: name.into(), staa: None }
}

fn stim(at_ms: i64, federate: &str, action: &str, value: impl Into<Datum>, label: Option<&str>) -> Stimulus {
    Stimulus { at: at(at_ms), federate: federate.into(), action: action.into(), value: value.into(), label: label.map(Into::into) }
}

fn half(i: Interval) -> Interval {
    Interval::from_ns(i.as_ns() / 2)
}

fn mode_suffix(mode: CoordinationMode) -> &'static str {
    match mode {
        CoordinationMode::Centralized => "central",
        CoordinationMode::Decentralized => "decentral",
    }
}

/// Direct links in decentralized mode; halved hops through the RTI otherwise.
fn links(mode: CoordinationMode, latency: Interval, jitter: Interval) -> Links {
    let (latency, jitter) = match mode {
        CoordinationMode::Decentralized => (latency, jitter),
        CoordinationMode::Centralized => (half(latency), half(jitter)),
    };
    Links { default: LinkModel { latency, jitter, partitions: Vec::new() }, overrides: Vec::new() }
}

/// Pins STA to zero and every logical input's STAA to `staa`.
/// STA 0 everywhere and `staa(from, to)` on every logical input.
fn pin_offsets(spec: &mut FederationSpec, staa: impl Fn(&str, &str) -> Interval) {
    let res = spec.resolve().expect("built-in federations are valid");
    let names: Vec<String> = spec.federates.iter().map(|f| f.name.clone()).collect();
    for (f, fed) in spec.federates.iter_mut().enumerate() {
        fed.sta = Some(Interval::ZERO);
        for p in res.logical_inputs(f) {
            let from = res.connections[res.incoming[&(f, p)]].from.0;
            fed.inputs[p].staa = Some(staa(&names[from], &names[f]));
        }
    }
}

impl Family {
    pub fn build(&self, mode: CoordinationMode) -> ScenarioDef {
        match *self {
            Family::Atm { nodes, latency, after, physical } => atm(nodes, latency, after, physical, mode),
            Family::Store { op, latency, jitter } => store(op, latency, jitter, mode),
            Family::FlattenedStore => flattened_store(mode),
            Family::Bulletin { physical } => bulletin(physical, mode),
        }
    }
}

const ATM_NAMES: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

fn atm(nodes: usize, latency: Interval, after: Option<Interval>, physical: bool, mode: CoordinationMode) -> ScenarioDef {
    assert!((2..=ATM_NAMES.len()).contains(&nodes), "ATM federations have 2 to 6 nodes");
    let names = &ATM_NAMES[..nodes];
    let port = |peer: &str| if nodes == 2 { "update".to_string() } else { format!("update_{peer}") };
    let federates = names
        .iter()
        .map(|me| {
            let peers: Vec<String> = names.iter().filter(|p| *p != me).map(|p| port(p)).collect();
            let peer_refs: Vec<&str> = peers.iter().map(String::as_str).collect();
            FederateSpec {
                name: (*me).into(),
                bank: None,
                inputs: peers.iter().map(|p| input(p)).collect(),
                outputs: vec!["out".into()],
                actions: vec![ActionSpec::physical("deposit")],
                reactions: vec![
                    rx(&["deposit"], &["out"], behavior::PUBLISH),
                    rx(&peer_refs, &[], behavior::MERGE),
                    rx(&["deposit"], &[], behavior::QUERY),
                ],
                sta: None,
            }
        })
        .collect();
    let mut connections = Vec::new();
    for from in names {
        for to in names.iter().filter(|t| *t != from) {
            let (src, dst) = (PortRef::new(from, "out"), PortRef::new(to, &port(from)));
            connections.push(if physical { Connection::physical(src, dst) } else { Connection::logical(src, dst, after) });
        }
    }
    let mut federation = FederationSpec { federates, connections, mode };
    if mode == CoordinationMode::Decentralized {
        let staa = latency.checked_sub(after.unwrap_or(Interval::ZERO)).unwrap_or(Interval::ZERO).max(Interval::ZERO);
        pin_offsets(&mut federation, |_, _| staa);
    }
    let stimuli = vec![
        stim(1000, "b", "deposit", 0, None),
        stim(1200, "b", "deposit", 100, Some("dep100")),
        stim(1400, "a", "deposit", -20, Some("wd20a")),
        stim(1600, "a", "deposit", -20, Some("wd20b")),
        stim(1800, "b", "deposit", 0, None),
    ];
    let mut name = format!("atm{nodes}");
    if let Some(d) = after {
        name.push_str(&format!("-after{}", d.as_ns() / 1_000_000));
    }
    if physical {
        name.push_str("-physical");
    }
    name.push('-');
    name.push_str(mode_suffix(mode));
    let expect = if physical {
        vec![Expectation::FinalState { federate: "b".into(), state: "60".into() }]
    } else {
        names.iter().map(|n| Expectation::FinalState { federate: (*n).into(), state: "60".into() }).collect()
    };
    ScenarioDef {
        name,
        summary: format!("{nodes}-node replicated account with add merge; deposit 100, two withdrawals of 20, query"),
        family: Family::Atm { nodes, latency, after, physical },
        config: SimConfig {
            federation,
            merges: names.iter().map(|n| (n.to_string(), MergeOp::Add)).collect(),
            overdraft: true,
            clocks: BTreeMap::new(),
            links: links(mode, latency, Interval::ZERO),
            stimuli,
            seed: 7,
            horizon: at(3000),
            tan_period: ms(10),
            absent_messages: false,
        },
        expect,
    }
}

fn store(op: MergeOp, latency: Interval, jitter: Interval, mode: CoordinationMode) -> ScenarioDef {
    let member = |name: &str, bank: u32| FederateSpec {
        name: name.into(),
        bank: Some(bank),
        inputs: vec![input("update")],
        outputs: vec!["out".into()],
        actions: vec![ActionSpec::physical("set"), ActionSpec::physical("get")],
        reactions: vec![
            rx(&["set"], &["out"], behavior::SUBMIT),
            rx(&["update"], &[], behavior::MERGE),
            rx(&["get"], &[], behavior::QUERY),
        ],
        sta: None,
    };
    let mut federation = FederationSpec {
        federates: vec![member("s1", 1), member("s2", 3)],
        connections: vec![
            Connection::logical(PortRef::new("s1", "out"), PortRef::new("s2", "update"), None),
            Connection::logical(PortRef::new("s2", "out"), PortRef::new("s1", "update"), None),
        ],
        mode,
    };
    if mode == CoordinationMode::Decentralized {
        let staa = latency.checked_add(jitter).unwrap_or(Interval::INF);
        pin_offsets(&mut federation, |_, _| staa);
    }
    let stimuli = vec![
        stim(500, "s1", "set", "red", Some("s1-red")),
        stim(500, "s2", "set", "blue", Some("s2-blue")),
        stim(700, "s1", "get", 0, None),
        stim(700, "s2", "get", 0, None),
        stim(900, "s2", "set", "green", Some("s2-green")),
        stim(1100, "s1", "get", 0, None),
        stim(1100, "s2", "get", 0, None),
    ];
    ScenarioDef {
        name: format!("store2-{op}-{}", mode_suffix(mode)).replace('_', "-"),
        summary: "two replicas of one key, banks 1 and 3, with simultaneous writes at 500 ms".into(),
        family: Family::Store { op, latency, jitter },
        config: SimConfig {
            federation,
            merges: [("s1".to_string(), op), ("s2".to_string(), op)].into_iter().collect(),
            overdraft: true,
            clocks: BTreeMap::new(),
            links: links(mode, latency, jitter),
            stimuli,
            seed: 11,
            horizon: at(2000),
            tan_period: ms(10),
            absent_messages: false,
        },
        expect: vec![
            Expectation::FinalState { federate: "s1".into(), state: "green".into() },
            Expectation::FinalState { federate: "s2".into(), state: "green".into() },
        ],
    }
}

fn flattened_store(mode: CoordinationMode) -> ScenarioDef {
    let user = |name: &str, port: &str| FederateSpec {
        name: name.into(),
        bank: None,
        inputs: vec![input(port)],
        outputs: vec!["update".into()],
        actions: vec![ActionSpec::physical("input")],
        reactions: vec![
            rx(&["startup"], &[], behavior::NOOP),
            rx(&["input"], &["update"], behavior::SUBMIT),
            rx(&[port], &[], behavior::DISPLAY),
        ],
        sta: None,
    };
    let replica = |name: &str, ports: [&str; 2], request: &str| FederateSpec {
        name: name.into(),
        bank: None,
        inputs: vec![input(ports[0]), input(ports[1])],
        outputs: vec!["response".into()],
        actions: vec![],
        reactions: vec![rx(&ports, &[], behavior::MERGE), rx(&[request], &["response"], behavior::RESPOND)],
        sta: None,
    };
    let c = |a: &str, p: &str, b: &str, q: &str| Connection::logical(PortRef::new(a, p), PortRef::new(b, q), None);
    let federation = FederationSpec {
        federates: vec![user("f1", "p5"), user("f2", "p6"), replica("f3", ["p7", "p9"], "p9"), replica("f4", ["p8", "p10"], "p10")],
        connections: vec![
            c("f1", "update", "f3", "p9"),
            c("f1", "update", "f4", "p8"),
            c("f2", "update", "f3", "p7"),
            c("f2", "update", "f4", "p10"),
            c("f3", "response", "f1", "p5"),
            c("f4", "response", "f2", "p6"),
        ],
        mode,
    };
    let links = match mode {
        CoordinationMode::Decentralized => Links {
            default: LinkModel::constant(Interval::ZERO),
            overrides: vec![
                LinkOverride { from: "f2".into(), to: "f3".into(), model: LinkModel::constant(ms(7)) },
                LinkOverride { from: "f1".into(), to: "f4".into(), model: LinkModel::constant(ms(9)) },
            ],
        },
        CoordinationMode::Centralized => Links {
            default: LinkModel::constant(ms(2)),
            overrides: vec![LinkOverride { from: "f2".into(), to: RTI.into(), model: LinkModel::constant(ms(5)) }],
        },
    };
    let stimuli = vec![
        stim(100, "f1", "input", "x", Some("f1-x")),
        stim(200, "f2", "input", "y", Some("f2-y")),
        stim(300, "f1", "input", "z", Some("f1-z")),
        stim(300, "f2", "input", "w", Some("f2-w")),
        stim(450, "f2", "input", "v", Some("f2-v")),
    ];
    ScenarioDef {
        name: format!("store-flattened-{}", mode_suffix(mode)),
        summary: "replicated store split into user-input federates f1, f2 and replicas f3, f4; L32 = 7 ms, L41 = 9 ms".into(),
        family: Family::FlattenedStore,
        config: SimConfig {
            federation,
            merges: [("f3".to_string(), MergeOp::Replace), ("f4".to_string(), MergeOp::Replace)].into_iter().collect(),
            overdraft: true,
            clocks: BTreeMap::new(),
            links,
            stimuli,
            seed: 3,
            horizon: at(1000),
            tan_period: ms(10),
            absent_messages: false,
        },
        expect: vec![
            Expectation::Offsets {
                sta: vec![("f1".into(), ms(0)), ("f2".into(), ms(0)), ("f3".into(), ms(7)), ("f4".into(), ms(9))],
                staa: vec![("f1.p5".into(), ms(7)), ("f2.p6".into(), ms(9))],
            },
            Expectation::FinalState { federate: "f3".into(), state: "v".into() },
            Expectation::FinalState { federate: "f4".into(), state: "v".into() },
        ],
    }
}

/// Seed whose jitter draws reproduce the observer anomaly under physical connections.
pub const BULLETIN_SEED: u64 = 1;

fn bulletin(physical: bool, mode: CoordinationMode) -> ScenarioDef {
    let member = |name: &str, inputs: &[&str], posts: bool| {
        let mut reactions = Vec::new();
        if posts {
            reactions.push(rx(&["post"], &["out"], behavior::SUBMIT));
        }
        if !inputs.is_empty() {
            reactions.push(rx(inputs, &[], behavior::MERGE));
        }
        reactions.push(rx(&["read"], &[], behavior::QUERY));
        let mut actions = vec![ActionSpec::physical("read")];
        if posts {
            actions.insert(0, ActionSpec::physical("post"));
        }
        FederateSpec {
            name: name.into(),
            bank: None,
            inputs: inputs.iter().map(|p| input(p)).collect(),
            outputs: if posts { vec!["out".into()] } else { vec![] },
            actions,
            reactions,
            sta: None,
        }
    };
    let c = |a: &str, b: &str, q: &str| {
        let (src, dst) = (PortRef::new(a, "out"), PortRef::new(b, q));
        if physical {
            Connection::physical(src, dst)
        } else {
            Connection::logical(src, dst, None)
        }
    };
    let mut federation = FederationSpec {
        federates: vec![
            member("sally", &["from_joe"], true),
            member("joe", &["from_sally"], true),
            member("obs", &["from_sally", "from_joe"], false),
        ],
        connections: vec![
            c("sally", "joe", "from_sally"),
            c("joe", "sally", "from_joe"),
            c("sally", "obs", "from_sally"),
            c("joe", "obs", "from_joe"),
        ],
        mode,
    };
    let slow = LinkModel { latency: ms(150), jitter: ms(100), partitions: Vec::new() };
    let links = match mode {
        CoordinationMode::Decentralized => Links {
            default: LinkModel::constant(ms(10)),
            overrides: vec![LinkOverride { from: "sally".into(), to: "obs".into(), model: slow }],
        },
        CoordinationMode::Centralized => Links {
            default: LinkModel::constant(ms(5)),
            overrides: vec![LinkOverride {
                from: RTI.into(),
                to: "obs".into(),
                model: LinkModel { latency: ms(145), jitter: ms(100), partitions: Vec::new() },
            }],
        },
    };
    if mode == CoordinationMode::Decentralized && !physical {
        pin_offsets(&mut federation, |_, _| Interval::ZERO);
        let conns = federation.connections.clone();
        for f in &mut federation.federates {
            let inbound = conns.iter().filter(|c| c.to.federate == f.name);
            f.sta = inbound.map(|c| links.model(&c.from.federate, &f.name).worst()).max();
        }
    }
    let stimuli = vec![
        stim(100, "joe", "post", "joe-picture", Some("w1")),
        stim(200, "sally", "post", "sally-comment", Some("w2")),
        stim(300, "sally", "post", "sally-reply", Some("w3")),
        stim(400, "joe", "post", "joe-answer", Some("w4")),
        stim(450, "obs", "read", 0, None),
    ];
    let op = if physical { MergeOp::Append } else { MergeOp::SortedAppend };
    let expect = if physical {
        vec![Expectation::CausalViolation { missing: "w3".into(), present: "w4".into(), seed: BULLETIN_SEED }]
    } else {
        vec![Expectation::CausalPass]
    };
    ScenarioDef {
        name: format!("bulletin-{}-{}", if physical { "physical" } else { "logical" }, mode_suffix(mode)),
        summary: "Joe and Sally post, an observer reads; the Sally to observer link is slow and jittery".into(),
        family: Family::Bulletin { physical },
        config: SimConfig {
            federation,
            merges: ["sally", "joe", "obs"].iter().map(|n| (n.to_string(), op)).collect(),
            overdraft: true,
            clocks: BTreeMap::new(),
            links,
            stimuli,
            seed: BULLETIN_SEED,
            horizon: at(2000),
            tan_period: ms(10),
            absent_messages: false,
        },
        expect,
    }
}

/// Every built-in scenario in its primary mode.
pub fn builtin_scenarios() -> Vec<ScenarioDef> {
    use CoordinationMode::{Centralized as C, Decentralized as D};
    let atm = |nodes, after, physical| Family::Atm { nodes, latency: ms(50), after, physical };
    let store = |op| Family::Store { op, latency: ms(50), jitter: ms(5) };
    vec![
        atm(2, None, false).build(C),
        atm(2, None, false).build(D),
        atm(2, Some(ms(100)), false).build(D),
        atm(2, None, true).build(D),
        atm(3, None, false).build(C),
        store(MergeOp::Replace).build(C),
        store(MergeOp::SortedReplace).build(D),
        Family::FlattenedStore.build(D),
        Family::Bulletin { physical: true }.build(D),
        Family::Bulletin { physical: false }.build(D),
        Family::Bulletin { physical: false }.build(C),
    ]
}

pub fn builtin(name: &str) -> Option<ScenarioDef> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}
