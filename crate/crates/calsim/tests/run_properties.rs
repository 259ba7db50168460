use std::collections::HashMap;

use calsim::fedmodel::CoordinationMode;
use calsim::metrics::{inconsistency, RecordKind, Trace};
use calsim::scenarios::builtin_scenarios;
use calsim::simnet::{run, SimConfig};
use calsim::timekit::Interval;
use proptest::prelude::*;

fn assert_fifo(name: &str, trace: &Trace) {
    let sends: HashMap<u64, usize> =
        trace.records.iter().filter(|r| r.kind == RecordKind::Send).map(|r| (r.id, r.node)).collect();
    let mut last: HashMap<(usize, usize, Option<&str>), u64> = HashMap::new();
    for r in trace.records.iter().filter(|r| r.kind == RecordKind::Receive) {
        let link = r.link.unwrap();
        let key = (sends[&link], r.node, r.port.as_deref());
        if let Some(prev) = last.insert(key, link) {
            assert!(prev < link, "{name}: send {link} received after {prev} on {key:?}");
        }
    }
}

fn strongly_consistent(cfg: &SimConfig) -> bool {
    cfg.federation.mode == CoordinationMode::Centralized
        && cfg.federation.connections.iter().all(|c| !c.physical && c.after.is_none_or(|d| d == Interval::ZERO))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn seeded_runs_keep_trace_invariants(seed in any::<u64>()) {
        for def in builtin_scenarios() {
            let mut cfg = def.config.clone();
            cfg.seed = seed;
            let trace = run(&cfg).unwrap_or_else(|e| panic!("{}: {e}", def.name));
            prop_assert!(trace.validate().is_ok(), "{}: {:?}", def.name, trace.validate());
            assert_fifo(&def.name, &trace);
            if strongly_consistent(&cfg) {
                for c in &cfg.federation.connections {
                    let i = trace.node_index(&c.to.federate).unwrap();
                    let j = trace.node_index(&c.from.federate).unwrap();
                    prop_assert_eq!(inconsistency(&trace, i, j), Interval::ZERO, "{} {}->{}", def.name, c.from.federate, c.to.federate);
                }
            }
        }
    }
}
