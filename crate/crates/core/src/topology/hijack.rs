use std::collections::{BTreeMap, BTreeSet};

use super::{AsId, NodeId, Prefix, Topology, TopologyError, MAX_ROUTABLE_LEN};

/// How a node's inbound traffic is affected by a set of rogue announcements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diversion {
    None,
    /// A strictly more-specific announcement wins longest-match everywhere
    /// outside the node's own AS.
    Full,
    /// Same-length announcement: only these source ASes pick the rogue route.
    Partial(BTreeSet<AsId>),
}

#[derive(Debug, Clone)]
pub struct HijackCoverage {
    attacker: AsId,
    announced: Vec<Prefix>,
    per_node: Vec<Diversion>,
}

impl HijackCoverage {
    pub fn none(topology: &Topology, attacker: AsId) -> Self {
        HijackCoverage {
            attacker,
            announced: Vec::new(),
            per_node: vec![Diversion::None; topology.nodes().len()],
        }
    }

    pub fn attacker(&self) -> AsId {
        self.attacker
    }

    pub fn announced(&self) -> &[Prefix] {
        &self.announced
    }

    pub fn diversion(&self, node: NodeId) -> &Diversion {
        &self.per_node[node.index()]
    }

    /// Whether traffic sent from `src_as` towards `node` reaches the attacker.
    /// Traffic that stays inside the node's own AS is never diverted.
    pub fn diverts(&self, topology: &Topology, node: NodeId, src_as: AsId) -> bool {
        if topology.node(node).home_as == src_as {
            return false;
        }
        match &self.per_node[node.index()] {
            Diversion::None => false,
            Diversion::Full => true,
            Diversion::Partial(sources) => src_as == self.attacker || sources.contains(&src_as),
        }
    }

    /// Node → fully diverted. Partially diverted nodes map to `false`; use
    /// [`HijackCoverage::source_fraction`] for those.
    pub fn diverted(&self) -> BTreeMap<NodeId, bool> {
        self.per_node
            .iter()
            .enumerate()
            .map(|(i, d)| (NodeId(i as u32), matches!(d, Diversion::Full)))
            .collect()
    }

    /// Fraction of foreign source ASes whose traffic to `node` is diverted.
    pub fn source_fraction(&self, topology: &Topology, node: NodeId) -> f64 {
        let home = topology.node(node).home_as;
        let foreign: Vec<AsId> = topology.graph().ases().iter().copied().filter(|a| *a != home).collect();
        if foreign.is_empty() {
            return 0.0;
        }
        let hit = foreign.iter().filter(|a| self.diverts(topology, node, **a)).count();
        hit as f64 / foreign.len() as f64
    }
}

/// Computes which nodes lose their inbound traffic when `attacker_as`
/// originates `announced`. Equal-length announcements split traffic per
/// source AS with a fair coin derived from `seed`.
pub fn hijack_coverage(
    topology: &Topology,
    announced: &[Prefix],
    attacker_as: AsId,
    seed: u64,
) -> Result<HijackCoverage, TopologyError> {
    for p in announced {
        if p.len() > MAX_ROUTABLE_LEN {
            return Err(TopologyError::PrefixTooSpecific(*p));
        }
    }
    let mut announced: Vec<Prefix> = announced.to_vec();
    announced.sort();
    announced.dedup();

    let per_node = topology
        .nodes()
        .iter()
        .map(|node| {
            let rogue = announced.iter().filter(|p| p.contains(node.ip)).map(|p| p.len()).max();
            let legit = node.home_prefix.len();
            match rogue {
                Some(len) if len > legit => Diversion::Full,
                Some(len) if len == legit => {
                    let sources = topology
                        .graph()
                        .ases()
                        .iter()
                        .copied()
                        .filter(|a| *a != node.home_as)
                        .filter(|a| coin(seed, &node.home_prefix, *a))
                        .collect();
                    Diversion::Partial(sources)
                }
                _ => Diversion::None,
            }
        })
        .collect();
    Ok(HijackCoverage { attacker: attacker_as, announced, per_node })
}

fn coin(seed: u64, prefix: &Prefix, src: AsId) -> bool {
    let mut x = seed
        ^ (u64::from(u32::from(prefix.base())) << 8)
        ^ u64::from(prefix.len())
        ^ (u64::from(src.0) << 40);
    // splitmix64 finaliser
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x & 1 == 1
}
