#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;

use btcrs_core::engine::{run, AttackPlan, RunOutcome, SimConfig, SimParams};
use btcrs_core::planner::{covering_prefixes, maximal_isolatable};
use btcrs_core::protocol::BlockHash;
use btcrs_core::scenario::{load_scenario, Scenario};
use btcrs_core::topology::{AsId, NodeId, Prefix, Relationship, Topology, TopologyBuilder};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenario(name: &str) -> Scenario {
    load_scenario(format!("{}/scenarios/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

pub fn pfx(s: &str) -> Prefix {
    s.parse().unwrap()
}

pub fn ip(s: &str) -> Ipv4Addr {
    s.parse().unwrap()
}

/// A random network with a random target set, wired so that the online
/// attacker sees enough traffic to classify every target node.
pub struct PartitionCase {
    pub topology: Topology,
    pub config: SimConfig,
    pub target: BTreeSet<NodeId>,
}

pub const ATTACKER_AS: u32 = 2;

pub fn random_partition_case(seed: u64) -> Option<PartitionCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_as: u32 = rng.random_range(4..=10);
    let mut b = TopologyBuilder::new();
    let mut linked = BTreeSet::new();
    for a in 1..=n_as {
        b.add_as(a, "ZZ");
        b.prefix(pfx(&format!("10.{a}.0.0/16")), a);
    }
    b.link(ATTACKER_AS, 1, Relationship::CustomerOf);
    for a in 3..=n_as {
        let mut providers: Vec<u32> = std::iter::once(1).chain(3..a).collect();
        providers.shuffle(&mut rng);
        let k = if providers.len() > 1 && rng.random_bool(0.3) { 2 } else { 1 };
        for &p in &providers[..k] {
            b.link(a, p, Relationship::CustomerOf);
            linked.insert((p.min(a), p.max(a)));
        }
    }
    for a in 3..=n_as {
        for c in a + 1..=n_as {
            if !linked.contains(&(a, c)) && rng.random_bool(0.15) {
                b.link(a, c, Relationship::Peer);
            }
        }
    }

    let n_nodes: usize = rng.random_range(4..=30);
    let mut homes = Vec::new();
    let mut used = BTreeSet::new();
    for i in 0..n_nodes {
        let a: u32 = rng.random_range(3..=n_as);
        let addr = loop {
            let cand = format!("10.{a}.{}.{}", rng.random_range(0..=255u32), rng.random_range(1..=254u32));
            if used.insert(cand.clone()) {
                break cand;
            }
        };
        homes.push(a);
        b.node(&format!("x{i}"), ip(&addr), pfx(&format!("10.{a}.0.0/16")), a);
    }

    let n_pools: usize = rng.random_range(0..=4);
    let mut free: Vec<usize> = (0..n_nodes).collect();
    free.shuffle(&mut rng);
    let mut pool_names = Vec::new();
    let mut gateway = vec![false; n_nodes];
    for p in 0..n_pools {
        let k = rng.random_range(1..=3).min(free.len());
        if k == 0 {
            break;
        }
        let gws: Vec<String> = free.drain(..k).map(|i| {
            gateway[i] = true;
            format!("x{i}")
        }).collect();
        let peers: Vec<String> = pool_names.iter().filter(|_| rng.random_bool(0.3)).cloned().collect();
        let gw_refs: Vec<&str> = gws.iter().map(String::as_str).collect();
        let peer_refs: Vec<&str> = peers.iter().map(String::as_str).collect();
        let name = format!("pool{p}");
        b.pool(&name, &gw_refs, 0.0, &peer_refs);
        pool_names.push(name);
    }

    let target: BTreeSet<usize> = (0..n_nodes).filter(|_| rng.random_bool(0.5)).collect();
    let miners: Vec<usize> = (0..n_nodes).filter(|i| !target.contains(i) && !gateway[*i]).collect();
    if target.is_empty() || miners.is_empty() {
        return None;
    }
    // Only nodes outside the target mine, so every block is external to it.
    for &m in &miners {
        b.set_node_share(&format!("x{m}"), Some(1.0 / miners.len() as f64));
    }
    b.residual_share(0.0);
    let topology = b.build().ok()?;

    let mut pairs = BTreeSet::new();
    let add = |a: usize, c: usize, pairs: &mut BTreeSet<(usize, usize)>| {
        if a != c {
            pairs.insert((a.min(c), a.max(c)));
        }
    };
    for a in 0..n_nodes {
        for c in a + 1..n_nodes {
            if homes[a] == homes[c] {
                add(a, c, &mut pairs);
            }
        }
    }
    for &x in &target {
        // The partner must be reachable only through the attacker.
        let others: Vec<usize> = target
            .iter()
            .copied()
            .filter(|y| topology.stealth_kind(NodeId(x as u32), NodeId(*y as u32)).is_none())
            .collect();
        let &y = others.choose(&mut rng)?;
        add(x, y, &mut pairs);
    }
    let outside: Vec<usize> = (0..n_nodes).filter(|i| !target.contains(i)).collect();
    for w in outside.windows(2) {
        add(w[0], w[1], &mut pairs);
    }
    if outside.len() > 2 {
        add(outside[0], outside[outside.len() - 1], &mut pairs);
    }
    for _ in 0..rng.random_range(0..=n_nodes / 2) {
        let a = rng.random_range(0..n_nodes);
        let c = rng.random_range(0..n_nodes);
        add(a, c, &mut pairs);
    }

    let target: BTreeSet<NodeId> = target.into_iter().map(|i| NodeId(i as u32)).collect();
    let mut params = SimParams::default();
    params.seed = seed;
    params.run_blocks = 12;
    params.drain_time = 1200.0;
    params.threshold = 1e9;
    params.tx_getdata_rate = 1.0;
    params.convergence_delay = 0.0;
    let mut config = SimConfig::new(params);
    config.connections = Some(pairs.into_iter().map(|(a, c)| (NodeId(a as u32), NodeId(c as u32))).collect());
    config.attack = AttackPlan::Partition {
        ases: [AsId(ATTACKER_AS)].into(),
        announcer: AsId(ATTACKER_AS),
        target: target.clone(),
        prefixes: covering_prefixes(&topology, &target).prefixes_to_hijack,
        start: 0.0,
        stop: None,
    };
    Some(PartitionCase { topology, config, target })
}

pub struct PartitionVerdict {
    pub matches_oracle: bool,
    pub sound: bool,
    pub got: BTreeSet<NodeId>,
    pub expected: BTreeSet<NodeId>,
}

/// Whether any ancestor of `h` (inclusive) was mined outside `inside`.
pub fn tainted(out: &RunOutcome, h: &BlockHash, inside: &BTreeSet<NodeId>) -> bool {
    let index: BTreeMap<BlockHash, usize> = out.blocks.iter().enumerate().map(|(i, b)| (b.block.hash, i)).collect();
    let mut cur = index.get(h).copied();
    while let Some(i) = cur {
        let b = &out.blocks[i];
        if b.origins.iter().any(|o| !inside.contains(o)) {
            return true;
        }
        cur = b.block.parent.and_then(|p| index.get(&p).copied());
    }
    false
}

pub fn check_partition(case: &PartitionCase) -> PartitionVerdict {
    let out = run(&case.topology, &case.config).unwrap();
    let att = out.attacker.as_ref().expect("attack started");
    let got: BTreeSet<NodeId> = att.p.difference(&att.l).copied().collect();
    let expected = maximal_isolatable(&case.topology, &case.target);
    let isolated = att.isolated();
    let sound = isolated.iter().all(|n| {
        out.chains[n.index()].known_blocks().iter().all(|h| !tainted(&out, h, &isolated))
    });
    PartitionVerdict { matches_oracle: got == expected, sound, got, expected }
}

/// Exhaustive minimum number of announcements diverting every target node not
/// homed in a /24. Candidates are every prefix strictly inside some target's
/// home prefix, up to /24; search is breadth-first over covered subsets.
pub fn brute_force_min_prefixes(topology: &Topology, target: &BTreeSet<NodeId>) -> usize {
    let nodes: Vec<NodeId> = target.iter().copied().filter(|n| topology.node(*n).home_prefix.len() < 24).collect();
    let mut masks: BTreeSet<u64> = BTreeSet::new();
    for &n in &nodes {
        let home = topology.node(n).home_prefix;
        let addr = u32::from(topology.node(n).ip);
        for len in home.len() + 1..=24 {
            let base = addr & (u32::MAX << (32 - len));
            let cand = Prefix::new(base.into(), len).unwrap();
            let mut m = 0u64;
            for (i, &t) in nodes.iter().enumerate() {
                let tn = topology.node(t);
                if cand.contains(tn.ip) && cand.len() > tn.home_prefix.len() {
                    m |= 1 << i;
                }
            }
            masks.insert(m);
        }
    }
    let full = if nodes.is_empty() { 0 } else { (1u64 << nodes.len()) - 1 };
    let mut dist: BTreeMap<u64, usize> = BTreeMap::new();
    dist.insert(0, 0);
    let mut queue = VecDeque::from([0u64]);
    while let Some(s) = queue.pop_front() {
        if s == full {
            return dist[&s];
        }
        for m in &masks {
            let t = s | m;
            if !dist.contains_key(&t) {
                dist.insert(t, dist[&s] + 1);
                queue.push_back(t);
            }
        }
    }
    unreachable!("every target lies in some candidate")
}

/// Tiny topology with home prefixes of mixed lengths and no pools.
/// Returns it with a target made of whole ASes, so it is always feasible.
pub fn random_tiny_planner_case(seed: u64) -> (Topology, BTreeSet<NodeId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_as: u32 = rng.random_range(2..=6);
    let mut b = TopologyBuilder::new();
    for a in 1..=n_as {
        b.add_as(a, "ZZ");
        if a > 1 {
            b.link(a, 1, Relationship::CustomerOf);
        }
    }
    let mut homes: Vec<(u32, Prefix)> = Vec::new();
    for a in 1..=n_as {
        let len: u8 = rng.random_range(16..=24);
        let base = (10u32 << 24) | (a << 16);
        let p = Prefix::new(base.into(), len).unwrap();
        b.prefix(p, a);
        homes.push((a, p));
    }
    let mut names = Vec::new();
    let mut used = BTreeSet::new();
    for i in 0..rng.random_range(2..=14) {
        let (a, p) = homes[rng.random_range(0..homes.len())];
        let span = 1u32 << (32 - p.len());
        let off = loop {
            let o = rng.random_range(1..span.max(2));
            if used.insert((a, o)) {
                break o;
            }
        };
        let name = format!("t{i}");
        b.node(&name, (u32::from(p.base()) + off).into(), p, a);
        names.push((name, a));
    }
    let t = b.build().unwrap();
    let chosen: BTreeSet<u32> = (1..=n_as).filter(|_| rng.random_bool(0.5)).collect();
    let mut target: BTreeSet<NodeId> =
        names.iter().filter(|(_, a)| chosen.contains(a)).map(|(n, _)| t.node_by_name(n).unwrap()).collect();
    if target.is_empty() {
        target = t.nodes_in_as(t.node(NodeId(0)).home_as).into_iter().collect();
    }
    (t, target)
}

/// Four pools: a (AS1), b (AS2), and c/d privately peered (AS3, AS4). A
/// regular node shares AS1 with a's gateway but sits in the other half of
/// the /16, so isolating a costs two prefixes.
pub fn four_pool_fixture() -> Topology {
    let mut b = TopologyBuilder::new();
    for a in 1..=5 {
        b.add_as(a, "ZZ");
        b.prefix(pfx(&format!("{a}.0.0.0/16")), a);
        if a > 1 {
            b.link(a, 1, Relationship::CustomerOf);
        }
    }
    b.node("a1", ip("1.0.0.1"), pfx("1.0.0.0/16"), 1);
    b.node("r1", ip("1.0.200.1"), pfx("1.0.0.0/16"), 1);
    b.node("b1", ip("2.0.0.1"), pfx("2.0.0.0/16"), 2);
    b.node("c1", ip("3.0.0.1"), pfx("3.0.0.0/16"), 3);
    b.node("d1", ip("4.0.0.1"), pfx("4.0.0.0/16"), 4);
    b.node("r5", ip("5.0.0.1"), pfx("5.0.0.0/16"), 5);
    b.pool("a", &["a1"], 0.30, &[]);
    b.pool("b", &["b1"], 0.25, &[]);
    b.pool("c", &["c1"], 0.20, &["d"]);
    b.pool("d", &["d1"], 0.15, &[]);
    b.residual_share(0.10);
    b.build().unwrap()
}
