mod support;

use std::collections::BTreeSet;

use btcrs_core::topology::{
    compute_forwarding, hijack_coverage, AsGraph, AsId, AsLink, Diversion, Prefix, Relationship, RouteClass, Step,
    TopologyBuilder, TopologyError,
};
use proptest::prelude::*;
use support::*;

/// Random AS graph; providers always have lower ids so the hierarchy is acyclic.
fn graph_strategy() -> impl Strategy<Value = AsGraph> {
    (2u32..8)
        .prop_flat_map(|n| {
            let pairs: Vec<(u32, u32)> = (1..=n).flat_map(|a| (1..a).map(move |b| (a, b))).collect();
            let k = pairs.len();
            (Just(n), Just(pairs), proptest::collection::vec(0u8..5, k))
        })
        .prop_map(|(n, pairs, kinds)| {
            let links = pairs
                .iter()
                .zip(kinds)
                .filter_map(|(&(a, b), k)| match k {
                    0 | 1 => Some(AsLink { a: AsId(a), b: AsId(b), rel: Relationship::CustomerOf }),
                    2 => Some(AsLink { a: AsId(a), b: AsId(b), rel: Relationship::Peer }),
                    _ => None,
                })
                .collect();
            AsGraph::new((1..=n).map(|a| (AsId(a), "ZZ".to_string())).collect(), links).unwrap()
        })
}

/// Every simple path from `src` to `dst` that the graph's steps allow.
fn simple_paths(g: &AsGraph, src: AsId, dst: AsId) -> Vec<Vec<AsId>> {
    fn walk(g: &AsGraph, path: &mut Vec<AsId>, dst: AsId, out: &mut Vec<Vec<AsId>>) {
        let last = *path.last().unwrap();
        if last == dst {
            out.push(path.clone());
            return;
        }
        for &next in g.ases() {
            if !path.contains(&next) && g.step(last, next).is_some() {
                path.push(next);
                walk(g, path, dst, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(g, &mut vec![src], dst, &mut out);
    out
}

fn all_steps(g: &AsGraph, path: &[AsId], s: Step) -> bool {
    path.windows(2).all(|w| g.step(w[0], w[1]) == Some(s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn routes_match_exhaustive_search(g in graph_strategy()) {
        let table = compute_forwarding(&g);
        for &src in g.ases() {
            for &dst in g.ases() {
                let valid: Vec<Vec<AsId>> =
                    simple_paths(&g, src, dst).into_iter().filter(|p| g.is_valley_free(p)).collect();
                let path = table.path(src, dst);
                prop_assert_eq!(path.is_some(), !valid.is_empty(), "{:?} -> {:?}", src, dst);
                let Some(path) = path else { continue };
                prop_assert!(g.is_valley_free(&path));
                prop_assert_eq!(path.first(), Some(&src));
                prop_assert_eq!(path.last(), Some(&dst));
                prop_assert_eq!(path.iter().collect::<BTreeSet<_>>().len(), path.len());
                prop_assert_eq!(table.hops(src, dst), Some(path.len() - 1));

                let down: Vec<usize> =
                    valid.iter().filter(|p| all_steps(&g, p, Step::Down)).map(|p| p.len() - 1).collect();
                let across: Vec<usize> = valid
                    .iter()
                    .filter(|p| p.len() > 1 && g.step(p[0], p[1]) == Some(Step::Across) && all_steps(&g, &p[1..], Step::Down))
                    .map(|p| p.len() - 1)
                    .collect();
                let class = table.route_class(src, dst).unwrap();
                if src == dst {
                    prop_assert_eq!(class, RouteClass::Origin);
                } else if let Some(best) = down.iter().min() {
                    prop_assert_eq!(class, RouteClass::Customer);
                    prop_assert_eq!(path.len() - 1, *best);
                } else if let Some(best) = across.iter().min() {
                    prop_assert_eq!(class, RouteClass::Peer);
                    prop_assert_eq!(path.len() - 1, *best);
                } else {
                    prop_assert_eq!(class, RouteClass::Provider);
                }
            }
        }
    }

    #[test]
    fn prefix_halves_partition_parent(base in any::<u32>(), len in 0u8..24) {
        let p = Prefix::new(std::net::Ipv4Addr::from(base & (u32::MAX.checked_shl(32 - len as u32).unwrap_or(0))), len).unwrap();
        let (lo, hi) = p.halves().unwrap();
        prop_assert!(p.covers(&lo) && p.covers(&hi));
        prop_assert!(!lo.overlaps(&hi));
        prop_assert_eq!(lo.len(), len + 1);
        let probe = std::net::Ipv4Addr::from(base);
        prop_assert_eq!(p.contains(probe), lo.contains(probe) || hi.contains(probe));
    }
}

fn three_as_chain() -> btcrs_core::topology::Topology {
    let mut b = TopologyBuilder::new();
    b.add_as(1, "US").add_as(2, "CN").add_as(3, "DE");
    b.link(2, 1, Relationship::CustomerOf).link(3, 1, Relationship::CustomerOf);
    b.prefix(pfx("10.0.0.0/16"), 2).prefix(pfx("20.0.0.0/24"), 3);
    b.node("a", ip("10.0.0.1"), pfx("10.0.0.0/16"), 2);
    b.node("b", ip("10.0.200.1"), pfx("10.0.0.0/16"), 2);
    b.node("c", ip("20.0.0.1"), pfx("20.0.0.0/24"), 3);
    b.build().unwrap()
}

#[test]
fn more_specific_announcement_diverts_only_covered_nodes() {
    let t = three_as_chain();
    let cov = hijack_coverage(&t, &[pfx("10.0.0.0/17")], AsId(1), 1).unwrap();
    let (a, b, c) = (t.node_by_name("a").unwrap(), t.node_by_name("b").unwrap(), t.node_by_name("c").unwrap());
    assert_eq!(cov.diversion(a), &Diversion::Full);
    assert_eq!(cov.diversion(b), &Diversion::None);
    assert_eq!(cov.diversion(c), &Diversion::None);
    assert!(cov.diverts(&t, a, AsId(3)));
    assert!(!cov.diverts(&t, a, AsId(2)), "traffic inside the home AS stays put");
}

#[test]
fn equal_length_announcement_is_partial() {
    let t = three_as_chain();
    let c = t.node_by_name("c").unwrap();
    let cov = hijack_coverage(&t, &[pfx("20.0.0.0/24")], AsId(1), 9).unwrap();
    match cov.diversion(c) {
        Diversion::Partial(sources) => assert!(!sources.contains(&AsId(3))),
        other => panic!("expected a partial diversion, got {other:?}"),
    }
    assert!(cov.diverts(&t, c, AsId(1)), "the attacker always sees its own traffic");
    assert!(matches!(
        hijack_coverage(&t, &[pfx("20.0.0.0/25")], AsId(1), 9),
        Err(TopologyError::PrefixTooSpecific(_))
    ));
}

#[test]
fn stealth_connections_are_classified() {
    let s = scenario("paperlike.scn");
    let t = &s.topology;
    let n = |x: &str| t.node_by_name(x).unwrap();
    use btcrs_core::topology::StealthKind::*;
    assert_eq!(t.stealth_kind(n("A"), n("B")), Some(IntraAs));
    assert_eq!(t.stealth_kind(n("B"), n("E")), Some(IntraPool));
    assert_eq!(t.stealth_kind(n("G"), n("M")), None);
    assert_eq!(t.multihoming_degree(t.pool_by_name("red").unwrap()), 3);
}
