//! The joint Internet / Bitcoin topology: ASes and their relationships,
//! announced prefixes, node placements and mining pools.

mod hijack;
mod prefix;
mod routing;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hijack::{hijack_coverage, Diversion, HijackCoverage};
pub use prefix::{Prefix, MAX_ROUTABLE_LEN};
pub use routing::{compute_forwarding, ForwardingTable, RouteClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AsId(pub u32);

impl fmt::Display for AsId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AS{}", self.0)
    }
}

/// Index of a node in [`Topology::nodes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Index of a pool in [`Topology::pools`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoolId(pub u32);

impl PoolId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("duplicate AS {0}")]
    DuplicateAs(AsId),
    #[error("AS numbers must be positive")]
    ZeroAs,
    #[error("self link on {0}")]
    SelfLink(AsId),
    #[error("more than one relationship between {0} and {1}")]
    DuplicateLink(AsId, AsId),
    #[error("unknown AS {0}")]
    UnknownAs(AsId),
    #[error("provider hierarchy has a cycle through {0}")]
    ProviderCycle(AsId),
    #[error("invalid prefix {0}")]
    InvalidPrefix(String),
    #[error("prefix {0} is longer than /24 and would be filtered")]
    PrefixTooSpecific(Prefix),
    #[error("prefix {prefix} announced by both {a} and {b}")]
    ConflictingOrigin { prefix: Prefix, a: AsId, b: AsId },
    #[error("prefix {0} is not announced by any AS")]
    PrefixNotAnnounced(Prefix),
    #[error("prefix {prefix} is originated by {origin}, not {claimed}")]
    WrongOrigin { prefix: Prefix, origin: AsId, claimed: AsId },
    #[error("node {node}: {ip} is outside {prefix}")]
    OutsidePrefix { node: String, ip: Ipv4Addr, prefix: Prefix },
    #[error("prefix overlap inconsistency: node {node} at {ip} falls in the more specific {more_specific}")]
    Overlap { node: String, ip: Ipv4Addr, more_specific: Prefix },
    #[error("duplicate node {0}")]
    DuplicateNode(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("duplicate pool {0}")]
    DuplicatePool(String),
    #[error("unknown pool {0}")]
    UnknownPool(String),
    #[error("pool {0} has no gateways")]
    EmptyPool(String),
    #[error("node {node} is a gateway of both {first} and {second}")]
    SharedGateway { node: String, first: String, second: String },
    #[error("node {0} is a pool gateway and cannot carry its own hash share")]
    GatewayShare(String),
    #[error("hash share {0} outside [0, 1]")]
    ShareRange(f64),
    #[error("hash shares sum to {0}")]
    ShareSum(f64),
    #[error("residual share {0} but no regular node to receive it")]
    ResidualUnassigned(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relationship {
    /// `a` buys transit from `b`.
    #[serde(rename = "c2p")]
    CustomerOf,
    #[serde(rename = "p2p")]
    Peer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AsLink {
    pub a: AsId,
    pub b: AsId,
    pub rel: Relationship,
}

/// Direction of a single AS-level hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Up,
    Across,
    Down,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsGraph {
    ases: Vec<AsId>,
    country: Vec<String>,
    links: Vec<AsLink>,
    providers: Vec<Vec<usize>>,
    customers: Vec<Vec<usize>>,
    peers: Vec<Vec<usize>>,
}

impl AsGraph {
    pub fn new(ases: Vec<(AsId, String)>, links: Vec<AsLink>) -> Result<Self, TopologyError> {
        let mut ases = ases;
        ases.sort_by_key(|(a, _)| *a);
        for w in ases.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(TopologyError::DuplicateAs(w[0].0));
            }
        }
        if ases.first().is_some_and(|(a, _)| a.0 == 0) {
            return Err(TopologyError::ZeroAs);
        }
        let (ids, country): (Vec<AsId>, Vec<String>) = ases.into_iter().unzip();
        let n = ids.len();
        let idx = |a: AsId| ids.binary_search(&a).map_err(|_| TopologyError::UnknownAs(a));

        let mut providers = vec![Vec::new(); n];
        let mut customers = vec![Vec::new(); n];
        let mut peers = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for l in &links {
            if l.a == l.b {
                return Err(TopologyError::SelfLink(l.a));
            }
            let (ia, ib) = (idx(l.a)?, idx(l.b)?);
            if !seen.insert((ia.min(ib), ia.max(ib))) {
                return Err(TopologyError::DuplicateLink(l.a, l.b));
            }
            match l.rel {
                Relationship::CustomerOf => {
                    providers[ia].push(ib);
                    customers[ib].push(ia);
                }
                Relationship::Peer => {
                    peers[ia].push(ib);
                    peers[ib].push(ia);
                }
            }
        }
        for v in providers.iter_mut().chain(customers.iter_mut()).chain(peers.iter_mut()) {
            v.sort_unstable();
        }
        let graph = AsGraph { ases: ids, country, links, providers, customers, peers };
        graph.check_acyclic()?;
        Ok(graph)
    }

    fn check_acyclic(&self) -> Result<(), TopologyError> {
        // Kahn's algorithm on customer -> provider edges.
        let n = self.ases.len();
        let mut indeg: Vec<usize> = (0..n).map(|i| self.customers[i].len()).collect();
        let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut done = 0;
        while let Some(u) = queue.pop() {
            done += 1;
            for &p in &self.providers[u] {
                indeg[p] -= 1;
                if indeg[p] == 0 {
                    queue.push(p);
                }
            }
        }
        if done == n {
            Ok(())
        } else {
            let stuck = (0..n).find(|&i| indeg[i] > 0).unwrap();
            Err(TopologyError::ProviderCycle(self.ases[stuck]))
        }
    }

    /// All AS ids, ascending.
    pub fn ases(&self) -> &[AsId] {
        &self.ases
    }

    pub fn links(&self) -> &[AsLink] {
        &self.links
    }

    pub fn index_of(&self, asn: AsId) -> Option<usize> {
        self.ases.binary_search(&asn).ok()
    }

    pub fn contains(&self, asn: AsId) -> bool {
        self.index_of(asn).is_some()
    }

    pub fn country(&self, asn: AsId) -> Option<&str> {
        self.index_of(asn).map(|i| self.country[i].as_str())
    }

    pub fn ases_in_country(&self, country: &str) -> BTreeSet<AsId> {
        self.ases
            .iter()
            .zip(&self.country)
            .filter(|(_, c)| c.eq_ignore_ascii_case(country))
            .map(|(a, _)| *a)
            .collect()
    }

    pub fn providers_of(&self, i: usize) -> &[usize] {
        &self.providers[i]
    }

    pub fn customers_of(&self, i: usize) -> &[usize] {
        &self.customers[i]
    }

    pub fn peers_of(&self, i: usize) -> &[usize] {
        &self.peers[i]
    }

    /// Direction of the hop `a -> b`, or `None` when the two are not adjacent.
    pub fn step(&self, a: AsId, b: AsId) -> Option<Step> {
        let (ia, ib) = (self.index_of(a)?, self.index_of(b)?);
        if self.providers[ia].binary_search(&ib).is_ok() {
            Some(Step::Up)
        } else if self.customers[ia].binary_search(&ib).is_ok() {
            Some(Step::Down)
        } else if self.peers[ia].binary_search(&ib).is_ok() {
            Some(Step::Across)
        } else {
            None
        }
    }

    /// True when `path` follows adjacent links and never climbs after having
    /// gone across or down, with at most one peer hop.
    pub fn is_valley_free(&self, path: &[AsId]) -> bool {
        let mut descending = false;
        for w in path.windows(2) {
            match self.step(w[0], w[1]) {
                None => return false,
                Some(Step::Up) if descending => return false,
                Some(Step::Up) => {}
                Some(Step::Across) if descending => return false,
                Some(Step::Across) | Some(Step::Down) => descending = true,
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodePlacement {
    pub id: NodeId,
    pub name: String,
    pub ip: Ipv4Addr,
    pub home_prefix: Prefix,
    pub home_as: AsId,
    pub pool: Option<PoolId>,
    /// Explicit share of regular (non-gateway) nodes, if declared.
    pub hash_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pool {
    pub id: PoolId,
    pub name: String,
    pub gateways: Vec<NodeId>,
    pub hash_share: f64,
    pub private_peers: Vec<PoolId>,
}

/// Why the attacker cannot see a connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StealthKind {
    IntraAs,
    IntraPool,
    PoolToPool,
}

impl fmt::Display for StealthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StealthKind::IntraAs => "intra-AS",
            StealthKind::IntraPool => "intra-pool",
            StealthKind::PoolToPool => "pool-to-pool",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionClass {
    Stealth(StealthKind),
    Vulnerable { a_to_b: bool, b_to_a: bool },
    /// Neither direction crosses the attacker.
    Unintercepted,
}

/// An AS-level adversary: the ASes it controls plus any hijack in force.
#[derive(Debug, Clone, Default)]
pub struct AttackerSpec {
    pub ases: BTreeSet<AsId>,
    pub coverage: Option<HijackCoverage>,
}

/// Raw declarations, validated by [`TopologyBuilder::build`].
#[derive(Debug, Clone, Default)]
pub struct TopologyBuilder {
    ases: Vec<(AsId, String)>,
    links: Vec<AsLink>,
    prefixes: Vec<(Prefix, AsId)>,
    nodes: Vec<(String, Ipv4Addr, Prefix, AsId, Option<f64>)>,
    pools: Vec<(String, Vec<String>, f64, Vec<String>)>,
    residual_share: Option<f64>,
}

impl TopologyBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_as(&mut self, asn: u32, country: &str) -> &mut Self {
        self.ases.push((AsId(asn), country.to_string()));
        self
    }

    pub fn link(&mut self, a: u32, b: u32, rel: Relationship) -> &mut Self {
        self.links.push(AsLink { a: AsId(a), b: AsId(b), rel });
        self
    }

    pub fn prefix(&mut self, prefix: Prefix, origin: u32) -> &mut Self {
        self.prefixes.push((prefix, AsId(origin)));
        self
    }

    pub fn node(&mut self, name: &str, ip: Ipv4Addr, prefix: Prefix, asn: u32) -> &mut Self {
        self.nodes.push((name.to_string(), ip, prefix, AsId(asn), None));
        self
    }

    pub fn node_with_share(&mut self, name: &str, ip: Ipv4Addr, prefix: Prefix, asn: u32, share: Option<f64>) -> &mut Self {
        self.nodes.push((name.to_string(), ip, prefix, AsId(asn), share));
        self
    }

    pub fn pool(&mut self, name: &str, gateways: &[&str], share: f64, private_peers: &[&str]) -> &mut Self {
        self.pools.push((
            name.to_string(),
            gateways.iter().map(|s| s.to_string()).collect(),
            share,
            private_peers.iter().map(|s| s.to_string()).collect(),
        ));
        self
    }

    /// Replaces the gateway list of an already declared pool.
    pub fn set_pool_gateways(&mut self, pool: &str, gateways: &[String]) -> &mut Self {
        if let Some(p) = self.pools.iter_mut().find(|p| p.0 == pool) {
            p.1 = gateways.to_vec();
        }
        self
    }

    pub fn set_node_share(&mut self, name: &str, share: Option<f64>) -> &mut Self {
        if let Some(n) = self.nodes.iter_mut().find(|n| n.0 == name) {
            n.4 = share;
        }
        self
    }

    /// Share split equally among regular nodes without an explicit share.
    /// When no share is declared anywhere, mining is uniform over regular nodes.
    pub fn residual_share(&mut self, share: f64) -> &mut Self {
        self.residual_share = Some(share);
        self
    }

    pub fn build(&self) -> Result<Topology, TopologyError> {
        let graph = AsGraph::new(self.ases.clone(), self.links.clone())?;
        let table = compute_forwarding(&graph);

        let mut origins: BTreeMap<Prefix, AsId> = BTreeMap::new();
        for &(p, origin) in &self.prefixes {
            if p.len() > MAX_ROUTABLE_LEN {
                return Err(TopologyError::PrefixTooSpecific(p));
            }
            if !graph.contains(origin) {
                return Err(TopologyError::UnknownAs(origin));
            }
            if let Some(&prev) = origins.get(&p) {
                if prev != origin {
                    return Err(TopologyError::ConflictingOrigin { prefix: p, a: prev, b: origin });
                }
            }
            origins.insert(p, origin);
        }

        let mut nodes = Vec::with_capacity(self.nodes.len());
        let mut by_name = BTreeMap::new();
        for (i, (name, ip, prefix, asn, share)) in self.nodes.iter().enumerate() {
            if by_name.insert(name.clone(), NodeId(i as u32)).is_some() {
                return Err(TopologyError::DuplicateNode(name.clone()));
            }
            if !graph.contains(*asn) {
                return Err(TopologyError::UnknownAs(*asn));
            }
            let origin = *origins.get(prefix).ok_or(TopologyError::PrefixNotAnnounced(*prefix))?;
            if origin != *asn {
                return Err(TopologyError::WrongOrigin { prefix: *prefix, origin, claimed: *asn });
            }
            if !prefix.contains(*ip) {
                return Err(TopologyError::OutsidePrefix { node: name.clone(), ip: *ip, prefix: *prefix });
            }
            if let Some(more) = origins.keys().find(|q| q.len() > prefix.len() && q.contains(*ip)) {
                return Err(TopologyError::Overlap { node: name.clone(), ip: *ip, more_specific: *more });
            }
            if let Some(s) = share {
                if !(0.0..=1.0).contains(s) {
                    return Err(TopologyError::ShareRange(*s));
                }
            }
            nodes.push(NodePlacement {
                id: NodeId(i as u32),
                name: name.clone(),
                ip: *ip,
                home_prefix: *prefix,
                home_as: *asn,
                pool: None,
                hash_share: *share,
            });
        }

        let mut pool_by_name = BTreeMap::new();
        for (i, (name, ..)) in self.pools.iter().enumerate() {
            if pool_by_name.insert(name.clone(), PoolId(i as u32)).is_some() {
                return Err(TopologyError::DuplicatePool(name.clone()));
            }
        }
        let mut pools = Vec::with_capacity(self.pools.len());
        for (i, (name, gws, share, peers)) in self.pools.iter().enumerate() {
            if gws.is_empty() {
                return Err(TopologyError::EmptyPool(name.clone()));
            }
            if !(0.0..=1.0).contains(share) {
                return Err(TopologyError::ShareRange(*share));
            }
            let mut gateways = Vec::new();
            for g in gws {
                let id = *by_name.get(g).ok_or_else(|| TopologyError::UnknownNode(g.clone()))?;
                let node = &mut nodes[id.index()];
                if let Some(prev) = node.pool {
                    if prev.index() != i {
                        return Err(TopologyError::SharedGateway {
                            node: g.clone(),
                            first: self.pools[prev.index()].0.clone(),
                            second: name.clone(),
                        });
                    }
                }
                if node.hash_share.is_some() {
                    return Err(TopologyError::GatewayShare(g.clone()));
                }
                node.pool = Some(PoolId(i as u32));
                if !gateways.contains(&id) {
                    gateways.push(id);
                }
            }
            let mut private_peers = Vec::new();
            for p in peers {
                let id = *pool_by_name.get(p).ok_or_else(|| TopologyError::UnknownPool(p.clone()))?;
                if id.index() != i && !private_peers.contains(&id) {
                    private_peers.push(id);
                }
            }
            pools.push(Pool { id: PoolId(i as u32), name: name.clone(), gateways, hash_share: *share, private_peers });
        }
        // Private peerings are symmetric whichever side declares them.
        for i in 0..pools.len() {
            for j in pools[i].private_peers.clone() {
                let me = PoolId(i as u32);
                if !pools[j.index()].private_peers.contains(&me) {
                    pools[j.index()].private_peers.push(me);
                }
            }
        }
        for p in &mut pools {
            p.private_peers.sort();
        }

        let declared_any = !pools.is_empty() || nodes.iter().any(|n| n.hash_share.is_some());
        let residual = self.residual_share.unwrap_or(if declared_any { 0.0 } else { 1.0 });
        if !(0.0..=1.0).contains(&residual) {
            return Err(TopologyError::ShareRange(residual));
        }
        let receivers = nodes.iter().filter(|n| n.pool.is_none() && n.hash_share.is_none()).count();
        if residual > 0.0 && receivers == 0 {
            return Err(TopologyError::ResidualUnassigned(residual));
        }
        let total: f64 = pools.iter().map(|p| p.hash_share).sum::<f64>()
            + nodes.iter().filter_map(|n| n.hash_share).sum::<f64>()
            + residual;
        if (total - 1.0).abs() > 1e-9 {
            return Err(TopologyError::ShareSum((total * 1e9).round() / 1e9));
        }

        Ok(Topology {
            graph,
            table,
            prefixes: origins,
            nodes,
            pools,
            residual_share: residual,
            by_name,
            pool_by_name,
            builder: self.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    graph: AsGraph,
    table: ForwardingTable,
    prefixes: BTreeMap<Prefix, AsId>,
    nodes: Vec<NodePlacement>,
    pools: Vec<Pool>,
    residual_share: f64,
    by_name: BTreeMap<String, NodeId>,
    pool_by_name: BTreeMap<String, PoolId>,
    builder: TopologyBuilder,
}

impl Topology {
    pub fn graph(&self) -> &AsGraph {
        &self.graph
    }

    pub fn forwarding(&self) -> &ForwardingTable {
        &self.table
    }

    /// Legitimately announced prefixes and their origin AS.
    pub fn prefixes(&self) -> &BTreeMap<Prefix, AsId> {
        &self.prefixes
    }

    pub fn nodes(&self) -> &[NodePlacement] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodePlacement {
        &self.nodes[id.index()]
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn pools(&self) -> &[Pool] {
        &self.pools
    }

    pub fn pool(&self, id: PoolId) -> &Pool {
        &self.pools[id.index()]
    }

    pub fn pool_by_name(&self, name: &str) -> Option<PoolId> {
        self.pool_by_name.get(name).copied()
    }

    pub fn residual_share(&self) -> f64 {
        self.residual_share
    }

    /// A builder holding this topology's declarations, for derived variants.
    pub fn to_builder(&self) -> TopologyBuilder {
        self.builder.clone()
    }

    /// Number of distinct ASes hosting the pool's gateways.
    pub fn multihoming_degree(&self, pool: PoolId) -> usize {
        self.pools[pool.index()]
            .gateways
            .iter()
            .map(|g| self.node(*g).home_as)
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Mining share of each regular node (gateways get zero; their pool mines).
    pub fn node_shares(&self) -> Vec<f64> {
        let receivers = self.nodes.iter().filter(|n| n.pool.is_none() && n.hash_share.is_none()).count();
        let each = if receivers == 0 { 0.0 } else { self.residual_share / receivers as f64 };
        self.nodes
            .iter()
            .map(|n| match (n.pool, n.hash_share) {
                (Some(_), _) => 0.0,
                (None, Some(s)) => s,
                (None, None) => each,
            })
            .collect()
    }

    pub fn nodes_in_as(&self, asn: AsId) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.home_as == asn).map(|n| n.id).collect()
    }

    /// ASes that host at least one node.
    pub fn hosting_ases(&self) -> BTreeSet<AsId> {
        self.nodes.iter().map(|n| n.home_as).collect()
    }

    /// The stealth kind linking `a` and `b`, if any.
    pub fn stealth_kind(&self, a: NodeId, b: NodeId) -> Option<StealthKind> {
        let (na, nb) = (self.node(a), self.node(b));
        if na.home_as == nb.home_as {
            return Some(StealthKind::IntraAs);
        }
        match (na.pool, nb.pool) {
            (Some(pa), Some(pb)) if pa == pb => Some(StealthKind::IntraPool),
            (Some(pa), Some(pb)) if self.pools[pa.index()].private_peers.contains(&pb) => {
                Some(StealthKind::PoolToPool)
            }
            _ => None,
        }
    }

    /// ASes on the forwarding path from `src`'s AS to `dst`'s AS, endpoints
    /// included. A same-AS pair yields just that AS.
    pub fn intercepting_ases(&self, src: NodeId, dst: NodeId) -> BTreeSet<AsId> {
        intercepting_ases(&self.table, self.node(src), self.node(dst))
    }

    /// Whether `attacker` sees traffic flowing `src -> dst`.
    pub fn intercepts(&self, attacker: &AttackerSpec, src: NodeId, dst: NodeId) -> bool {
        let (s, d) = (self.node(src), self.node(dst));
        if s.home_as == d.home_as {
            return false;
        }
        if let Some(cov) = &attacker.coverage {
            if cov.diverts(self, dst, s.home_as) {
                return true;
            }
        }
        if attacker.ases.is_empty() {
            return false;
        }
        match self.table.path(s.home_as, d.home_as) {
            Some(path) => path.iter().any(|a| attacker.ases.contains(a)),
            None => false,
        }
    }

    pub fn classify_connection(&self, a: NodeId, b: NodeId, attacker: &AttackerSpec) -> ConnectionClass {
        if let Some(kind) = self.stealth_kind(a, b) {
            return ConnectionClass::Stealth(kind);
        }
        let a_to_b = self.intercepts(attacker, a, b);
        let b_to_a = self.intercepts(attacker, b, a);
        if a_to_b || b_to_a {
            ConnectionClass::Vulnerable { a_to_b, b_to_a }
        } else {
            ConnectionClass::Unintercepted
        }
    }
}

/// ASes on `path(src.home_as, dst.home_as)`, endpoints included.
pub fn intercepting_ases(table: &ForwardingTable, src: &NodePlacement, dst: &NodePlacement) -> BTreeSet<AsId> {
    if src.home_as == dst.home_as {
        return BTreeSet::from([src.home_as]);
    }
    table
        .path(src.home_as, dst.home_as)
        .map(|p| p.into_iter().collect())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pfx(s: &str) -> Prefix {
        s.parse().unwrap()
    }

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    fn two_as() -> TopologyBuilder {
        let mut b = TopologyBuilder::new();
        b.add_as(1, "US").add_as(2, "DE").link(1, 2, Relationship::Peer);
        b.prefix(pfx("1.0.0.0/16"), 1).prefix(pfx("2.0.0.0/16"), 2);
        b.node("a", ip("1.0.0.1"), pfx("1.0.0.0/16"), 1);
        b.node("b", ip("2.0.0.1"), pfx("2.0.0.0/16"), 2);
        b
    }

    #[test]
    fn minimal_topology_builds() {
        let t = two_as().build().unwrap();
        assert_eq!(t.graph().ases().len(), 2);
        assert_eq!(t.graph().links().len(), 1);
        assert_eq!(t.node_shares(), vec![0.5, 0.5]);
    }

    #[test]
    fn share_sum_is_checked() {
        let mut b = two_as();
        b.pool("p", &["a"], 0.5, &[]).node_with_share("c", ip("2.0.0.2"), pfx("2.0.0.0/16"), 2, Some(0.4));
        let err = b.build().unwrap_err();
        assert_eq!(err.to_string(), "hash shares sum to 0.9");
    }

    #[test]
    fn provider_cycle_rejected() {
        let mut b = TopologyBuilder::new();
        b.add_as(1, "US").add_as(2, "US").add_as(3, "US");
        b.link(1, 2, Relationship::CustomerOf)
            .link(2, 3, Relationship::CustomerOf)
            .link(3, 1, Relationship::CustomerOf);
        assert!(matches!(b.build(), Err(TopologyError::ProviderCycle(_))));
    }

    #[test]
    fn duplicate_link_rejected() {
        let mut b = two_as();
        b.link(2, 1, Relationship::CustomerOf);
        assert!(matches!(b.build(), Err(TopologyError::DuplicateLink(..))));
    }

    #[test]
    fn more_specific_legit_prefix_must_be_home() {
        let mut b = two_as();
        b.prefix(pfx("1.0.0.0/24"), 1);
        assert!(matches!(b.build(), Err(TopologyError::Overlap { .. })));
    }

    #[test]
    fn same_as_is_stealth_and_single_as() {
        let mut b = two_as();
        b.node("c", ip("1.0.0.2"), pfx("1.0.0.0/16"), 1);
        let t = b.build().unwrap();
        let (a, c) = (t.node_by_name("a").unwrap(), t.node_by_name("c").unwrap());
        assert_eq!(t.intercepting_ases(a, c), BTreeSet::from([AsId(1)]));
        let spec = AttackerSpec { ases: BTreeSet::from([AsId(1)]), coverage: None };
        assert_eq!(t.classify_connection(a, c, &spec), ConnectionClass::Stealth(StealthKind::IntraAs));
    }
}
