mod support;

use std::collections::BTreeSet;

use btcrs_core::engine::{
    digest, run, run_seeds, AttackPlan, Direction, DisconnectReason, SimConfig, SimParams, TraceEvent,
};
use btcrs_core::planner::covering_prefixes;
use btcrs_core::topology::{AsId, Relationship, Topology, TopologyBuilder};
use proptest::prelude::*;
use support::*;

fn short(mut cfg: SimConfig, blocks: u32) -> SimConfig {
    cfg.params.run_blocks = blocks;
    cfg.params.drain_time = 1800.0;
    cfg
}

#[test]
fn runs_are_reproducible() {
    let s = scenario("paperlike.scn");
    let mut cfg = short(s.config.clone(), 30);
    cfg.params.trace = true;
    let a = run(&s.topology, &cfg).unwrap();
    let b = run(&s.topology, &cfg).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(serde_json::to_string(&a.trace).unwrap(), serde_json::to_string(&b.trace).unwrap());

    cfg.params.seed = 2;
    let c = run(&s.topology, &cfg).unwrap();
    assert_ne!(a.report.counters, c.report.counters);
    assert_eq!(a.report.config_digest, c.report.config_digest, "the digest ignores the seed");
}

#[test]
fn parallel_runs_match_serial_runs() {
    let s = scenario("paperlike.scn");
    let cfg = short(s.config.clone(), 20);
    let par = run_seeds(&s.topology, &cfg, &[3, 4, 5]).unwrap();
    for (out, seed) in par.iter().zip([3, 4, 5]) {
        let mut one = cfg.clone();
        one.params.seed = seed;
        assert_eq!(out.report, run(&s.topology, &one).unwrap().report);
    }
}

#[test]
fn digest_tracks_the_configuration() {
    let s = scenario("paperlike.scn");
    let mut other = s.config.clone();
    other.params.per_hop_delay = 1.0;
    assert_ne!(digest(&s.topology, &s.config), digest(&s.topology, &other));
    other = s.config.clone();
    other.params.trace = true;
    assert_eq!(digest(&s.topology, &s.config), digest(&s.topology, &other));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn blocks_are_conserved(seed in 1u64..10_000) {
        let s = scenario("paperlike.scn");
        let mut cfg = short(s.config.clone(), 25);
        cfg.params.seed = seed;
        let out = run(&s.topology, &cfg).unwrap();
        let mined: u64 = out.report.blocks_mined.values().sum();
        let in_chain: u64 = out.report.blocks_in_chain.values().sum();
        prop_assert_eq!(mined, 25);
        prop_assert_eq!(out.blocks.len(), 25);
        prop_assert!(in_chain <= mined);
        prop_assert!((out.report.orphan_rate - (1.0 - in_chain as f64 / mined as f64)).abs() < 1e-12);

        // Every node's view: main chain plus orphans accounts for every block it knows.
        for chain in &out.chains {
            let main: BTreeSet<_> = chain.main_chain().into_iter().collect();
            let orphans = chain.orphans();
            prop_assert!(main.is_disjoint(&orphans));
            prop_assert_eq!(main.len() + orphans.len(), chain.known_blocks().len());
            prop_assert_eq!(chain.main_chain().len() as u32, chain.tip_height() + 1);
        }
        // No attack and a long drain: every node ends at the same height.
        let h0 = out.chains[0].tip_height();
        prop_assert!(out.chains.iter().all(|c| c.tip_height() == h0));
    }
}

#[test]
fn no_transactions_means_no_restore() {
    let mut b = TopologyBuilder::new();
    b.add_as(1, "ZZ").add_as(2, "ZZ").link(1, 2, Relationship::Peer);
    b.prefix(pfx("1.0.0.0/16"), 1).prefix(pfx("2.0.0.0/16"), 2);
    b.node_with_share("S", ip("1.0.0.1"), pfx("1.0.0.0/16"), 1, Some(1.0));
    b.node_with_share("V", ip("2.0.0.1"), pfx("2.0.0.0/16"), 2, Some(0.0));
    let t = b.build().unwrap();
    let (s, v) = (t.node_by_name("S").unwrap(), t.node_by_name("V").unwrap());
    let mut p = SimParams::default();
    p.run_blocks = 1;
    p.drain_time = 3000.0;
    p.trace = true;
    p.tx_getdata_rate = 0.0;
    let mut cfg = SimConfig::new(p);
    cfg.connections = Some(vec![(v, s)]);
    cfg.attack = AttackPlan::DelayNode { victim: v, fraction: 1.0, direction: Direction::Outgoing, start: 0.0 };
    let out = run(&t, &cfg).unwrap();

    let requested = out
        .trace
        .iter()
        .find_map(|e| match e {
            TraceEvent::Requested { t, node, .. } if *node == v => Some(*t),
            _ => None,
        })
        .unwrap();
    let disconnect = out
        .trace
        .iter()
        .find_map(|e| match e {
            TraceEvent::Disconnected { t, node, reason: DisconnectReason::Timeout, .. } if *node == v => Some(*t),
            _ => None,
        })
        .unwrap();
    assert_eq!(disconnect, requested + 1200.0);
    assert!(!out.trace.iter().any(|e| matches!(e, TraceEvent::Restored { .. })));
    assert!(!out.trace.iter().any(|e| matches!(e, TraceEvent::Accepted { node, .. } if *node == v)));
    assert_eq!(out.report.counters["timeout_disconnects"], 1);
}

/// Two ASes with half the hash rate each, split by a hijack that never ends.
fn halves() -> Topology {
    let mut b = TopologyBuilder::new();
    b.add_as(1, "ZZ").add_as(2, "ZZ").add_as(3, "ZZ").add_as(4, "ZZ");
    for a in 2..=4 {
        b.link(a, 1, Relationship::CustomerOf);
    }
    b.prefix(pfx("3.0.0.0/16"), 3).prefix(pfx("4.0.0.0/16"), 4);
    b.node_with_share("x1", ip("3.0.0.1"), pfx("3.0.0.0/16"), 3, Some(0.5));
    b.node_with_share("x2", ip("3.0.200.1"), pfx("3.0.0.0/16"), 3, Some(0.0));
    b.node_with_share("y1", ip("4.0.0.1"), pfx("4.0.0.0/16"), 4, Some(0.5));
    b.node_with_share("y2", ip("4.0.200.1"), pfx("4.0.0.0/16"), 4, Some(0.0));
    b.build().unwrap()
}

#[test]
fn even_split_orphans_half_the_blocks() {
    let t = halves();
    let n = |x: &str| t.node_by_name(x).unwrap();
    let target: BTreeSet<_> = [n("x1"), n("x2")].into();
    let mut p = SimParams::default();
    p.run_blocks = 100;
    p.drain_time = 1800.0;
    p.threshold = 1e9;
    p.convergence_delay = 0.0;
    let mut cfg = SimConfig::new(p);
    cfg.connections = Some(vec![(n("x1"), n("x2")), (n("y1"), n("y2")), (n("x1"), n("y1")), (n("x2"), n("y2"))]);
    cfg.attack = AttackPlan::Partition {
        ases: [AsId(2)].into(),
        announcer: AsId(2),
        target: target.clone(),
        prefixes: covering_prefixes(&t, &target).prefixes_to_hijack,
        start: 0.0,
        stop: None,
    };
    let outs = run_seeds(&t, &cfg, &[1, 2, 3, 4, 5, 6]).unwrap();
    for out in &outs {
        let part = out.report.partition.as_ref().unwrap();
        assert_eq!(part.isolated, vec!["x1".to_string(), "x2".to_string()]);
        assert!(!part.gave_up);
    }
    let mean = outs.iter().map(|o| o.report.orphan_rate).sum::<f64>() / outs.len() as f64;
    assert!((mean - 0.5).abs() < 0.1, "mean orphan rate {mean}");
}

#[test]
fn invalid_configurations_are_rejected() {
    let t = halves();
    let mut cfg = SimConfig::new(SimParams::default());
    cfg.attack = AttackPlan::DelayNode {
        victim: t.node_by_name("x1").unwrap(),
        fraction: 1.5,
        direction: Direction::Incoming,
        start: 0.0,
    };
    assert!(run(&t, &cfg).is_err());
    let mut p = SimParams::default();
    assert!(p.set("restore_margin", "1200").is_err());
    assert!(p.set("no_such_key", "1").is_err());
    p.set("per_hop_delay", "0.5").unwrap();
    assert_eq!(p.per_hop_delay, 0.5);
}
