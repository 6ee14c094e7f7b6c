use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;

use super::{stream, STREAM_TOPOLOGY};
use crate::topology::{AsId, Topology, TopologyError};

/// Variant of `topology` where every pool's gateways span exactly `degree`
/// distinct ASes (or every hosting AS, if there are fewer).
///
/// Lowering the degree keeps the gateways in the pool's first `degree`
/// gateway ASes; the rest stay in the network as regular nodes without
/// mining power. Raising it adds one gateway `<pool>-gw<k>` per missing AS,
/// with ASes drawn from the node-hosting ASes in a per-pool random order, so
/// higher degrees extend lower ones under the same seed.
pub fn with_multihoming(topology: &Topology, degree: usize, seed: u64) -> Result<Topology, TopologyError> {
    let mut b = topology.to_builder();
    let hosting: Vec<AsId> = topology.hosting_ases().into_iter().collect();
    let mut used_ips: BTreeSet<Ipv4Addr> = topology.nodes().iter().map(|n| n.ip).collect();
    let degree = degree.max(1);

    for pool in topology.pools() {
        let mut ases: Vec<AsId> = Vec::new();
        for g in &pool.gateways {
            let a = topology.node(*g).home_as;
            if !ases.contains(&a) {
                ases.push(a);
            }
        }
        let mut gateways: Vec<String> = Vec::new();
        if degree <= ases.len() {
            let keep = &ases[..degree];
            for g in &pool.gateways {
                let n = topology.node(*g);
                if keep.contains(&n.home_as) {
                    gateways.push(n.name.clone());
                } else {
                    b.set_node_share(&n.name, Some(0.0));
                }
            }
        } else {
            gateways.extend(pool.gateways.iter().map(|g| topology.node(*g).name.clone()));
            let mut extra: Vec<AsId> = hosting.iter().copied().filter(|a| !ases.contains(a)).collect();
            extra.shuffle(&mut stream(seed, STREAM_TOPOLOGY + ((pool.id.0 as u64 + 1) << 16)));
            for (k, asn) in extra.into_iter().take(degree - ases.len()).enumerate() {
                let (prefix, ip) = free_address(topology, asn, &used_ips).ok_or(TopologyError::UnknownAs(asn))?;
                used_ips.insert(ip);
                let name = format!("{}-gw{}", pool.name, k + 1);
                b.node(&name, ip, prefix, asn.0);
                gateways.push(name);
            }
        }
        b.set_pool_gateways(&pool.name, &gateways);
    }
    b.build()
}

/// First unused address in a prefix announced by `asn` that no more specific
/// prefix covers.
fn free_address(
    topology: &Topology,
    asn: AsId,
    used: &BTreeSet<Ipv4Addr>,
) -> Option<(crate::topology::Prefix, Ipv4Addr)> {
    let prefixes = topology.prefixes();
    for (p, origin) in prefixes {
        if *origin != asn {
            continue;
        }
        let size = 1u64 << (32 - p.len());
        for off in 1..size.min(1 << 16) {
            let ip = Ipv4Addr::from(u32::from(p.base()) + off as u32);
            let shadowed = prefixes.keys().any(|q| q.len() > p.len() && q.contains(ip));
            if !used.contains(&ip) && !shadowed {
                return Some((*p, ip));
            }
        }
    }
    None
}
