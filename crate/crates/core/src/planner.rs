//! Offline partition planning: which node sets can be cut off, and how many
//! prefixes it takes.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::topology::{NodeId, PoolId, Prefix, StealthKind, Topology, MAX_ROUTABLE_LEN};

/// Exhaustive set-cover search is used up to this many candidate prefixes.
pub const EXACT_CANDIDATE_LIMIT: usize = 20;
pub const MAX_ENUMERATED_POOLS: usize = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("target set is empty")]
    EmptyTarget,
    #[error("target set is not feasible: {} stealth connection(s) cross its boundary", .0.len())]
    Infeasible(Vec<Bridge>),
    #[error("power range {lo}:{hi} is not within [0, 1]")]
    BadRange { lo: f64, hi: f64 },
    #[error("{0} pools is too many for exhaustive enumeration (limit 24); narrow the topology")]
    TooManyPools(usize),
}

/// A stealth connection between a node inside the target and one outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Bridge {
    pub inside: NodeId,
    pub outside: NodeId,
    pub kind: StealthKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub violations: Vec<Bridge>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionPlan {
    pub target: BTreeSet<NodeId>,
    pub prefixes_to_hijack: Vec<Prefix>,
    pub feasible: bool,
    pub maximal_isolatable: BTreeSet<NodeId>,
    pub stealth_bridges: Vec<Bridge>,
    /// Set when the prefix count comes from the greedy fallback.
    pub approximate: bool,
    /// Nodes homed in a /24: only an equal-length announcement is possible,
    /// which attracts part of their traffic.
    pub partial_coverage: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerPartition {
    pub nodes: BTreeSet<NodeId>,
    pub pools: Vec<PoolId>,
    pub mining_power: f64,
    pub min_prefixes: usize,
    pub plan: PartitionPlan,
}

/// Connected components of the stealth graph. Nodes are joined when they
/// share an AS, a pool, or sit in privately peered pools.
pub fn stealth_components(topology: &Topology) -> Vec<usize> {
    let n = topology.nodes().len();
    let ases: Vec<_> = topology.graph().ases().to_vec();
    let pools = topology.pools().len();
    // Vertices: nodes, then one hub per AS, then one hub per pool.
    let as_hub = |i: usize| n + i;
    let pool_hub = |p: PoolId| n + ases.len() + p.index();
    let total = n + ases.len() + pools;
    let mut adj = vec![Vec::new(); total];
    for node in topology.nodes() {
        let i = node.id.index();
        let h = as_hub(topology.graph().index_of(node.home_as).unwrap());
        adj[i].push(h);
        adj[h].push(i);
        if let Some(p) = node.pool {
            adj[i].push(pool_hub(p));
            adj[pool_hub(p)].push(i);
        }
    }
    for pool in topology.pools() {
        for peer in &pool.private_peers {
            adj[pool_hub(pool.id)].push(pool_hub(*peer));
        }
    }
    let mut comp = vec![usize::MAX; total];
    let mut next = 0;
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = next;
                    queue.push_back(v);
                }
            }
        }
        next += 1;
    }
    comp.truncate(n);
    comp
}

/// Every stealth connection with exactly one endpoint in `p`.
pub fn stealth_bridges(topology: &Topology, p: &BTreeSet<NodeId>) -> Vec<Bridge> {
    let mut out = Vec::new();
    for &inside in p {
        for outside in topology.node_ids().filter(|o| !p.contains(o)) {
            if let Some(kind) = topology.stealth_kind(inside, outside) {
                out.push(Bridge { inside, outside, kind });
            }
        }
    }
    out
}

/// A target is feasible when every AS and every (merged) pool is either
/// entirely inside or entirely outside it, i.e. no stealth connection crosses.
pub fn is_feasible(topology: &Topology, p: &BTreeSet<NodeId>) -> Feasibility {
    let violations = stealth_bridges(topology, p);
    Feasibility { feasible: violations.is_empty(), violations }
}

/// The largest subset of `p` with no stealth path to a node outside `p`.
pub fn maximal_isolatable(topology: &Topology, p: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
    let comp = stealth_components(topology);
    let leaky: BTreeSet<usize> = topology
        .node_ids()
        .filter(|n| !p.contains(n))
        .map(|n| comp[n.index()])
        .collect();
    p.iter().copied().filter(|n| !leaky.contains(&comp[n.index()])).collect()
}

/// Smallest set of announcements that pulls in all traffic towards `p`.
pub fn min_prefixes_to_isolate(topology: &Topology, p: &BTreeSet<NodeId>) -> Result<PartitionPlan, PlanError> {
    if p.is_empty() {
        return Err(PlanError::EmptyTarget);
    }
    let feas = is_feasible(topology, p);
    if !feas.feasible {
        return Err(PlanError::Infeasible(feas.violations));
    }
    Ok(covering_prefixes(topology, p))
}

/// Minimum announcements diverting traffic towards every node of `p`,
/// whether or not `p` can actually be isolated.
pub fn covering_prefixes(topology: &Topology, p: &BTreeSet<NodeId>) -> PartitionPlan {
    let mut partial = BTreeSet::new();
    let mut equal_length = BTreeSet::new();
    let mut must_cover: Vec<NodeId> = Vec::new();
    let mut candidates: BTreeSet<Prefix> = BTreeSet::new();
    for &id in p {
        let node = topology.node(id);
        if node.home_prefix.len() >= MAX_ROUTABLE_LEN {
            partial.insert(id);
            equal_length.insert(node.home_prefix);
        } else {
            must_cover.push(id);
            let (lo, hi) = node.home_prefix.halves().expect("shorter than /24");
            candidates.insert(lo);
            candidates.insert(hi);
        }
    }
    // Any announcement more specific than a home prefix lies inside one of
    // its halves, and the half covers at least as many target nodes.
    let candidates: Vec<Prefix> = candidates.into_iter().collect();
    let covers = |c: &Prefix, id: NodeId| {
        let node = topology.node(id);
        c.contains(node.ip) && c.len() > node.home_prefix.len()
    };
    // Targets hit by exactly the same candidates are one element of the universe.
    let classes: BTreeSet<Vec<usize>> = must_cover
        .iter()
        .map(|&id| (0..candidates.len()).filter(|&i| covers(&candidates[i], id)).collect())
        .collect();
    let classes: Vec<Vec<usize>> = classes.into_iter().collect();
    let (chosen, approximate) = if candidates.len() <= EXACT_CANDIDATE_LIMIT && classes.len() <= 64 {
        let mut masks = vec![0u64; candidates.len()];
        for (e, class) in classes.iter().enumerate() {
            for &c in class {
                masks[c] |= 1 << e;
            }
        }
        (exact_cover(&masks, classes.len()), false)
    } else {
        (greedy_cover(&classes, candidates.len()), true)
    };

    let mut prefixes: Vec<Prefix> = chosen.into_iter().map(|i| candidates[i]).collect();
    prefixes.extend(equal_length);
    prefixes.sort();
    PartitionPlan {
        target: p.clone(),
        prefixes_to_hijack: prefixes,
        feasible: true,
        maximal_isolatable: p.clone(),
        stealth_bridges: Vec::new(),
        approximate,
        partial_coverage: partial,
    }
}

/// A plan for any target. Infeasible ones also report the bridges and the
/// isolatable core; their prefixes still divert traffic towards all of `p`,
/// which is what the online attacker needs to find the core.
pub fn plan_partition(topology: &Topology, p: &BTreeSet<NodeId>) -> Result<PartitionPlan, PlanError> {
    match min_prefixes_to_isolate(topology, p) {
        Err(PlanError::Infeasible(bridges)) => Ok(PartitionPlan {
            feasible: false,
            maximal_isolatable: maximal_isolatable(topology, p),
            stealth_bridges: bridges,
            ..covering_prefixes(topology, p)
        }),
        other => other,
    }
}

fn exact_cover(masks: &[u64], universe: usize) -> Vec<usize> {
    let full: u64 = if universe == 64 { u64::MAX } else { (1u64 << universe) - 1 };
    if full == 0 {
        return Vec::new();
    }
    let m = masks.len();
    let mut best: Option<u32> = None;
    for subset in 1u32..(1u32 << m) {
        if best.is_some_and(|b| subset.count_ones() >= b.count_ones()) {
            continue;
        }
        let covered = (0..m).filter(|i| subset >> i & 1 == 1).fold(0u64, |acc, i| acc | masks[i]);
        if covered == full {
            best = Some(subset);
        }
    }
    let best = best.expect("halves of every home prefix cover all targets");
    (0..m).filter(|i| best >> i & 1 == 1).collect()
}

fn greedy_cover(classes: &[Vec<usize>], candidates: usize) -> Vec<usize> {
    let mut left: Vec<&Vec<usize>> = classes.iter().collect();
    let mut chosen = Vec::new();
    while !left.is_empty() {
        let best = (0..candidates)
            .max_by_key(|&c| (left.iter().filter(|cl| cl.contains(&c)).count(), std::cmp::Reverse(c)))
            .unwrap();
        left.retain(|cl| !cl.contains(&best));
        chosen.push(best);
    }
    chosen.sort_unstable();
    chosen
}

/// Pools joined by private peerings, as groups of pool ids.
pub fn super_pools(topology: &Topology) -> Vec<Vec<PoolId>> {
    let n = topology.pools().len();
    let mut group = vec![usize::MAX; n];
    let mut out = Vec::new();
    for start in 0..n {
        if group[start] != usize::MAX {
            continue;
        }
        let g = out.len();
        let mut members = Vec::new();
        let mut stack = vec![start];
        group[start] = g;
        while let Some(u) = stack.pop() {
            members.push(PoolId(u as u32));
            for peer in &topology.pools()[u].private_peers {
                if group[peer.index()] == usize::MAX {
                    group[peer.index()] = g;
                    stack.push(peer.index());
                }
            }
        }
        members.sort();
        out.push(members);
    }
    out
}

/// Smallest feasible node set containing `seed_pools`: adds every node sharing
/// an AS or a (merged) pool with a member until nothing changes.
pub fn close_over_pools(topology: &Topology, seed_pools: &[PoolId]) -> (BTreeSet<NodeId>, BTreeSet<PoolId>) {
    let comp = stealth_components(topology);
    let mut comps = BTreeSet::new();
    for p in seed_pools {
        for g in &topology.pool(*p).gateways {
            comps.insert(comp[g.index()]);
        }
    }
    let nodes: BTreeSet<NodeId> = topology.node_ids().filter(|n| comps.contains(&comp[n.index()])).collect();
    let pools = topology
        .pools()
        .iter()
        .filter(|pool| pool.gateways.iter().any(|g| nodes.contains(g)))
        .map(|pool| pool.id)
        .collect();
    (nodes, pools)
}

/// Every feasible target built from whole pools whose isolated hash share
/// falls in `[lo, hi]`, sorted by the number of prefixes needed.
pub fn enumerate_power_partitions(topology: &Topology, lo: f64, hi: f64) -> Result<Vec<PowerPartition>, PlanError> {
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(PlanError::BadRange { lo, hi });
    }
    let n = topology.pools().len();
    if n > MAX_ENUMERATED_POOLS {
        return Err(PlanError::TooManyPools(n));
    }
    let groups = super_pools(topology);
    const EPS: f64 = 1e-9;
    let mut seen: BTreeMap<BTreeSet<NodeId>, ()> = BTreeMap::new();
    let mut out = Vec::new();
    for subset in 0u32..(1u32 << groups.len()) {
        let seeds: Vec<PoolId> = (0..groups.len())
            .filter(|i| subset >> i & 1 == 1)
            .flat_map(|i| groups[i].iter().copied())
            .collect();
        let (nodes, pools) = close_over_pools(topology, &seeds);
        if seen.insert(nodes.clone(), ()).is_some() {
            continue;
        }
        let power: f64 = pools.iter().map(|p| topology.pool(*p).hash_share).sum();
        if power < lo - EPS || power > hi + EPS {
            continue;
        }
        let plan = if nodes.is_empty() {
            PartitionPlan {
                target: BTreeSet::new(),
                prefixes_to_hijack: Vec::new(),
                feasible: true,
                maximal_isolatable: BTreeSet::new(),
                stealth_bridges: Vec::new(),
                approximate: false,
                partial_coverage: BTreeSet::new(),
            }
        } else {
            min_prefixes_to_isolate(topology, &nodes)?
        };
        out.push(PowerPartition {
            min_prefixes: plan.prefixes_to_hijack.len(),
            nodes,
            pools: pools.into_iter().collect(),
            mining_power: power,
            plan,
        });
    }
    out.sort_by(|a, b| {
        a.min_prefixes
            .cmp(&b.min_prefixes)
            .then(b.mining_power.total_cmp(&a.mining_power))
            .then(a.pools.cmp(&b.pools))
    });
    Ok(out)
}

/// A plan with node names in place of ids, as written to plan files.
pub fn plan_json(topology: &Topology, plan: &PartitionPlan) -> serde_json::Value {
    let name = |n: &NodeId| topology.node(*n).name.clone();
    let names = |s: &BTreeSet<NodeId>| s.iter().map(name).collect::<Vec<_>>();
    let bridges: Vec<serde_json::Value> = plan
        .stealth_bridges
        .iter()
        .map(|b| serde_json::json!({"inside": name(&b.inside), "outside": name(&b.outside), "kind": b.kind}))
        .collect();
    serde_json::json!({
        "target": names(&plan.target),
        "prefixes_to_hijack": plan.prefixes_to_hijack,
        "feasible": plan.feasible,
        "maximal_isolatable": names(&plan.maximal_isolatable),
        "stealth_bridges": bridges,
        "approximate": plan.approximate,
        "partial_coverage": names(&plan.partial_coverage),
    })
}

/// [`plan_json`] plus the pools, their power and the prefix count.
pub fn power_partition_json(topology: &Topology, p: &PowerPartition) -> serde_json::Value {
    let mut v = plan_json(topology, &p.plan);
    let obj = v.as_object_mut().expect("object");
    let pools: Vec<&str> = p.pools.iter().map(|id| topology.pool(*id).name.as_str()).collect();
    obj.insert("pools".into(), serde_json::json!(pools));
    obj.insert("mining_power".into(), serde_json::json!(p.mining_power));
    obj.insert("min_prefixes".into(), serde_json::json!(p.min_prefixes));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{Relationship, TopologyBuilder};

    fn pfx(s: &str) -> Prefix {
        s.parse().unwrap()
    }

    // A and X share AS1; B in AS2, C in AS3, D in AS4.
    fn intra_as() -> Topology {
        let mut b = TopologyBuilder::new();
        for a in 1..=4 {
            b.add_as(a, "ZZ");
            b.prefix(pfx(&format!("{a}.0.0.0/16")), a);
        }
        b.link(1, 2, Relationship::Peer).link(3, 2, Relationship::CustomerOf).link(4, 2, Relationship::CustomerOf);
        b.node("A", "1.0.0.1".parse().unwrap(), pfx("1.0.0.0/16"), 1);
        b.node("X", "1.0.0.2".parse().unwrap(), pfx("1.0.0.0/16"), 1);
        b.node("B", "2.0.0.1".parse().unwrap(), pfx("2.0.0.0/16"), 2);
        b.node("C", "3.0.0.1".parse().unwrap(), pfx("3.0.0.0/16"), 3);
        b.node("D", "4.0.0.1".parse().unwrap(), pfx("4.0.0.0/16"), 4);
        b.build().unwrap()
    }

    fn set(t: &Topology, names: &[&str]) -> BTreeSet<NodeId> {
        names.iter().map(|n| t.node_by_name(n).unwrap()).collect()
    }

    #[test]
    fn intra_as_split_is_infeasible() {
        let t = intra_as();
        let f = is_feasible(&t, &set(&t, &["A", "B", "C"]));
        assert!(!f.feasible);
        assert_eq!(
            f.violations,
            vec![Bridge { inside: set(&t, &["A"]).pop_first().unwrap(), outside: set(&t, &["X"]).pop_first().unwrap(), kind: StealthKind::IntraAs }]
        );
        assert!(is_feasible(&t, &set(&t, &["B", "C"])).feasible);
        assert!(is_feasible(&t, &t.node_ids().collect()).feasible);
        assert_eq!(maximal_isolatable(&t, &set(&t, &["A", "B", "C"])), set(&t, &["B", "C"]));
    }

    #[test]
    fn one_or_two_halves() {
        let t = intra_as();
        let plan = min_prefixes_to_isolate(&t, &set(&t, &["A", "X"])).unwrap();
        assert_eq!(plan.prefixes_to_hijack, vec![pfx("1.0.0.0/17")]);
        assert!(matches!(min_prefixes_to_isolate(&t, &BTreeSet::new()), Err(PlanError::EmptyTarget)));
    }
}
