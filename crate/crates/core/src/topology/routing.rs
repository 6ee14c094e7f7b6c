//! AS-level forwarding under business-relationship routing policy.
//!
//! Every AS prefers routes learned from customers over routes learned from
//! peers over routes learned from providers, then shorter AS paths, then the
//! lowest next-hop AS number. Routes are exported following the usual rules:
//! customer routes go to everybody, peer and provider routes only go to
//! customers. The table is built one destination at a time as a routing tree
//! rooted at the destination, in three sweeps (customer, peer, provider).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use super::{AsGraph, AsId};

const NO_HOP: u32 = u32::MAX;

/// How the first hop of a route relates to the AS that uses it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RouteClass {
    Origin,
    Customer,
    Peer,
    Provider,
}

/// Next hops for every ordered AS pair. Paths are directional.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardingTable {
    ases: Vec<AsId>,
    next: Vec<u32>,
    class: Vec<Option<RouteClass>>,
}

impl ForwardingTable {
    fn slot(&self, src: usize, dst: usize) -> usize {
        src * self.ases.len() + dst
    }

    fn index_of(&self, asn: AsId) -> Option<usize> {
        self.ases.binary_search(&asn).ok()
    }

    pub fn ases(&self) -> &[AsId] {
        &self.ases
    }

    /// AS path from `src` to `dst`, both inclusive. `None` when no
    /// policy-compliant route exists.
    pub fn path(&self, src: AsId, dst: AsId) -> Option<Vec<AsId>> {
        let s = self.index_of(src)?;
        let d = self.index_of(dst)?;
        let mut out = vec![src];
        let mut cur = s;
        while cur != d {
            let hop = self.next[self.slot(cur, d)];
            if hop == NO_HOP {
                return None;
            }
            cur = hop as usize;
            out.push(self.ases[cur]);
            if out.len() > self.ases.len() {
                unreachable!("forwarding loop towards {dst}");
            }
        }
        Some(out)
    }

    /// Number of AS-level hops (path length minus one).
    pub fn hops(&self, src: AsId, dst: AsId) -> Option<usize> {
        self.path(src, dst).map(|p| p.len() - 1)
    }

    pub fn route_class(&self, src: AsId, dst: AsId) -> Option<RouteClass> {
        let s = self.index_of(src)?;
        let d = self.index_of(dst)?;
        self.class[self.slot(s, d)]
    }

    pub fn reachable(&self, src: AsId, dst: AsId) -> bool {
        self.route_class(src, dst).is_some()
    }
}

/// Builds the forwarding table for every ordered pair of ASes.
pub fn compute_forwarding(graph: &AsGraph) -> ForwardingTable {
    let ases = graph.ases().to_vec();
    let n = ases.len();
    let mut table = ForwardingTable {
        ases,
        next: vec![NO_HOP; n * n],
        class: vec![None; n * n],
    };
    for dst in 0..n {
        let tree = routing_tree(graph, dst);
        for (src, entry) in tree.into_iter().enumerate() {
            if let Some((class, _len, hop)) = entry {
                let slot = table.slot(src, dst);
                table.class[slot] = Some(class);
                table.next[slot] = hop;
            }
        }
    }
    table
}

type Entry = Option<(RouteClass, u32, u32)>;

fn routing_tree(graph: &AsGraph, dst: usize) -> Vec<Entry> {
    let n = graph.ases().len();
    let id = |i: usize| graph.ases()[i].0;
    let mut route: Vec<Entry> = vec![None; n];
    route[dst] = Some((RouteClass::Origin, 0, dst as u32));

    // Customer routes climb the provider hierarchy one layer at a time.
    let mut layer = vec![dst];
    let mut depth = 0;
    while !layer.is_empty() {
        depth += 1;
        let mut found: BTreeMap<usize, usize> = BTreeMap::new();
        for &u in &layer {
            for &p in graph.providers_of(u) {
                if route[p].is_some() {
                    continue;
                }
                found
                    .entry(p)
                    .and_modify(|hop| {
                        if id(u) < id(*hop) {
                            *hop = u;
                        }
                    })
                    .or_insert(u);
            }
        }
        layer = Vec::with_capacity(found.len());
        for (p, hop) in found {
            route[p] = Some((RouteClass::Customer, depth, hop as u32));
            layer.push(p);
        }
    }

    // Peer routes: one lateral step onto a customer (or origin) route.
    let mut peer_routes = Vec::new();
    for x in 0..n {
        if route[x].is_some() {
            continue;
        }
        let best = graph
            .peers_of(x)
            .iter()
            .filter_map(|&y| match route[y] {
                Some((RouteClass::Origin | RouteClass::Customer, len, _)) => Some((len + 1, id(y), y)),
                _ => None,
            })
            .min();
        if let Some((len, _, y)) = best {
            peer_routes.push((x, len, y));
        }
    }
    for (x, len, y) in peer_routes {
        route[x] = Some((RouteClass::Peer, len, y as u32));
    }

    // Provider routes flow down to customers, shortest first.
    let mut heap = BinaryHeap::new();
    for x in 0..n {
        if let Some((_, len, _)) = route[x] {
            for &c in graph.customers_of(x) {
                if route[c].is_none() {
                    heap.push(Reverse((len + 1, id(x), x, c)));
                }
            }
        }
    }
    while let Some(Reverse((len, _, x, c))) = heap.pop() {
        if route[c].is_some() {
            continue;
        }
        route[c] = Some((RouteClass::Provider, len, x as u32));
        for &cc in graph.customers_of(c) {
            if route[cc].is_none() {
                heap.push(Reverse((len + 1, id(c), c, cc)));
            }
        }
    }
    route
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{AsLink, Relationship};

    fn graph(n: u32, links: &[(u32, u32, Relationship)]) -> AsGraph {
        let ases = (1..=n).map(|i| (AsId(i), "ZZ".to_string())).collect();
        let links = links
            .iter()
            .map(|&(a, b, rel)| AsLink { a: AsId(a), b: AsId(b), rel })
            .collect();
        AsGraph::new(ases, links).unwrap()
    }

    use Relationship::{CustomerOf as C2P, Peer as P2P};

    fn ids(p: &[u32]) -> Vec<AsId> {
        p.iter().map(|&i| AsId(i)).collect()
    }

    #[test]
    fn chain_has_single_route() {
        // 3 is a customer of 2, which is a customer of 1.
        let g = graph(3, &[(3, 2, C2P), (2, 1, C2P)]);
        let t = compute_forwarding(&g);
        assert_eq!(t.path(AsId(3), AsId(1)).unwrap(), ids(&[3, 2, 1]));
        assert_eq!(t.path(AsId(1), AsId(3)).unwrap(), ids(&[1, 2, 3]));
        assert_eq!(t.path(AsId(2), AsId(2)).unwrap(), ids(&[2]));
    }

    #[test]
    fn peer_routes_do_not_transit() {
        // 1 -- 2 -- 3 peers in a row: 1 cannot reach 3.
        let g = graph(3, &[(1, 2, P2P), (2, 3, P2P)]);
        let t = compute_forwarding(&g);
        assert!(t.path(AsId(1), AsId(3)).is_none());
        assert_eq!(t.path(AsId(1), AsId(2)).unwrap(), ids(&[1, 2]));
    }

    #[test]
    fn lowest_next_hop_breaks_ties() {
        // 4 has two providers (2 and 3), both customers of 1.
        let g = graph(4, &[(4, 2, C2P), (4, 3, C2P), (2, 1, C2P), (3, 1, C2P)]);
        let t = compute_forwarding(&g);
        assert_eq!(t.path(AsId(1), AsId(4)).unwrap(), ids(&[1, 2, 4]));
    }
}
