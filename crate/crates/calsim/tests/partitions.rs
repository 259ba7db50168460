use calsim::fedmodel::{derive_offsets, CoordinationMode, ExecBounds, ModelError};
use calsim::metrics::{check_eventual_consistency, EventualOutcome, RecordKind, Trace};
use calsim::scenarios::{builtin, MergeOp, ScenarioDef};
use calsim::simnet::{run, tardy_count, Partition, PartitionPolicy};
use calsim::timekit::Timestamp;

fn cut(mut def: ScenarioDef, start: i64, end: i64, policy: PartitionPolicy) -> ScenarioDef {
    let p = Partition { start: Timestamp::from_ms(start), end: Timestamp::from_ms(end), policy };
    def.config.links.default.partitions.push(p);
    def.config.horizon = Timestamp::from_ms(end + 2000);
    def
}

fn receives(t: &Trace) -> usize {
    t.records.iter().filter(|r| r.kind == RecordKind::Receive).count()
}

#[test]
fn buffered_messages_arrive_after_heal() {
    let base = builtin("atm2-decentral").unwrap();
    let t = run(&cut(base.clone(), 1100, 1500, PartitionPolicy::Buffer).config).unwrap();
    assert_eq!(receives(&t), receives(&run(&base.config).unwrap()));
    let late = t.records.iter().filter(|r| r.kind == RecordKind::Receive && r.origin.is_some());
    for r in late {
        assert!(r.vt > Timestamp::from_ms(1500), "record {} arrived at {}", r.id, r.vt);
    }
    assert!(tardy_count(&t) >= 1);
}

#[test]
fn dropped_messages_leave_replicas_apart() {
    let def = cut(builtin("atm2-decentral").unwrap(), 1100, 1500, PartitionPolicy::Drop);
    let t = run(&def.config).unwrap();
    assert_eq!(tardy_count(&t), 0);
    let e = check_eventual_consistency(&t, def.config.horizon).unwrap();
    assert!(matches!(e, EventualOutcome::Diverged { .. }), "{e:?}");
}

#[test]
fn sorted_replace_converges_despite_drops() {
    let mut def = cut(builtin("atm2-decentral").unwrap(), 1100, 1500, PartitionPolicy::Drop);
    for op in def.config.merges.values_mut() {
        *op = MergeOp::SortedReplace;
    }
    let t = run(&def.config).unwrap();
    let e = check_eventual_consistency(&t, def.config.horizon).unwrap();
    assert!(matches!(e, EventualOutcome::Converged { .. }), "{e:?}");
}

#[test]
fn centralized_partition_only_delays() {
    let base = builtin("atm2-central").unwrap();
    let t = run(&cut(base.clone(), 1100, 1500, PartitionPolicy::Buffer).config).unwrap();
    assert_eq!(tardy_count(&t), 0);
    let finals = |t: &Trace| {
        let b = t.node_index("b").unwrap();
        t.records.iter().filter(|r| r.node == b && r.kind == RecordKind::Read).filter_map(|r| r.state.clone()).next_back()
    };
    assert_eq!(finals(&t), finals(&run(&base.config).unwrap()));
}

#[test]
fn merged_user_and_replica_federates_cannot_derive_sta() {
    let def = builtin("atm2-decentral").unwrap().in_mode(CoordinationMode::Decentralized);
    let c = &def.config;
    let r = derive_offsets(&c.federation, &c.latency_bounds(), &c.clock_error_bounds(), &ExecBounds::default());
    assert!(matches!(r, Err(ModelError::UnsatisfiableSta { .. })), "{r:?}");
}
