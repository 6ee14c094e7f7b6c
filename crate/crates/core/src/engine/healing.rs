//! Connection-level model of how a network heals after a partition is lifted.
//! Only peer selection and churn matter here, so blocks are not simulated.

use std::collections::{BTreeSet, BinaryHeap};
use std::cmp::Reverse;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{next_reboot_gap, stream, LifetimeTable, SAMPLE_INTERVAL, STREAM_CHURN, STREAM_PEERS};
use crate::protocol::{MAX_OUTBOUND, MAX_PEERS};
use crate::topology::{Relationship, Topology, TopologyBuilder, TopologyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HealingParams {
    pub seed: u64,
    pub churn: bool,
    pub lifetimes: LifetimeTable,
    /// How long the perfect partition is enforced before the lift.
    pub attack_duration: f64,
    /// Observation time after the lift.
    pub observe: f64,
}

impl Default for HealingParams {
    fn default() -> Self {
        HealingParams {
            seed: 1,
            churn: true,
            lifetimes: LifetimeTable::empirical(),
            attack_duration: 3600.0,
            observe: 10.0 * 3600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealingResult {
    /// Crossing share of connections just before the attack.
    pub pre_attack: f64,
    pub lifted_at: f64,
    /// `(seconds since lift, crossing share)` every sample interval.
    pub series: Vec<(f64, f64)>,
}

impl HealingResult {
    /// Series divided by the pre-attack level.
    pub fn recovery(&self) -> Vec<(f64, f64)> {
        self.series
            .iter()
            .map(|(t, f)| (*t, if self.pre_attack > 0.0 { f / self.pre_attack } else { 0.0 }))
            .collect()
    }
}

/// A star of `ases` stub ASes under one transit AS, each hosting `per_as`
/// nodes in its own /16.
pub fn healing_topology(ases: u32, per_as: u32) -> Result<Topology, TopologyError> {
    let mut b = TopologyBuilder::new();
    b.add_as(1, "ZZ");
    for a in 0..ases {
        let asn = a + 2;
        b.add_as(asn, "ZZ");
        b.link(asn, 1, Relationship::CustomerOf);
        let base = 0x0A00_0000u32 + (a << 16);
        let prefix = crate::topology::Prefix::new(base.into(), 16)?;
        b.prefix(prefix, asn);
        for k in 0..per_as {
            b.node(&format!("h{}", a * per_as + k), (base + k + 1).into(), prefix, asn);
        }
    }
    b.build()
}

fn pair_unit(seed: u64, a: usize, b: usize) -> f64 {
    let (x, y) = if a < b { (a, b) } else { (b, a) };
    let mut z = seed ^ ((x as u64) << 32 | y as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

struct Net<'a> {
    topo: &'a Topology,
    half: usize,
    out: Vec<BTreeSet<usize>>,
    inc: Vec<BTreeSet<usize>>,
    rng: rand_chacha::ChaCha8Rng,
    seed: u64,
    onpath: f64,
    phase: Phase,
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    Before,
    Attack,
    After,
}

impl Net<'_> {
    fn side(&self, n: usize) -> bool {
        n < self.half
    }

    fn crossing(&self, a: usize, b: usize) -> bool {
        self.side(a) != self.side(b)
    }

    fn allowed(&self, a: usize, b: usize) -> bool {
        if !self.crossing(a, b) {
            return true;
        }
        match self.phase {
            Phase::Before => true,
            Phase::Attack => false,
            Phase::After => pair_unit(self.seed, a, b) >= self.onpath,
        }
    }

    fn slash16(&self, n: usize) -> u32 {
        u32::from(self.topo.nodes()[n].ip) >> 16
    }

    fn refill(&mut self, a: usize, exclude: Option<usize>) {
        while self.out[a].len() < MAX_OUTBOUND {
            let taken: BTreeSet<u32> = self.out[a].iter().map(|n| self.slash16(*n)).collect();
            let candidates: Vec<usize> = (0..self.out.len())
                .filter(|&c| {
                    c != a
                        && Some(c) != exclude
                        && !self.out[a].contains(&c)
                        && !self.inc[a].contains(&c)
                        && self.inc[c].len() + self.out[c].len() < MAX_PEERS
                        && !taken.contains(&self.slash16(c))
                        && self.allowed(a, c)
                })
                .collect();
            let Some(&c) = candidates.choose(&mut self.rng) else {
                break;
            };
            self.out[a].insert(c);
            self.inc[c].insert(a);
        }
    }

    fn drop_conn(&mut self, opener: usize, peer: usize) {
        self.out[opener].remove(&peer);
        self.inc[peer].remove(&opener);
    }

    fn reboot(&mut self, n: usize) {
        let outs: Vec<usize> = self.out[n].iter().copied().collect();
        for p in outs {
            self.drop_conn(n, p);
        }
        let ins: Vec<usize> = self.inc[n].iter().copied().collect();
        for o in &ins {
            self.drop_conn(*o, n);
        }
        for o in ins {
            self.refill(o, Some(n));
        }
        self.refill(n, None);
    }

    fn cross_fraction(&self) -> f64 {
        let total: usize = self.out.iter().map(|s| s.len()).sum();
        let cross: usize = self.out.iter().enumerate().map(|(a, s)| s.iter().filter(|b| self.crossing(a, **b)).count()).sum();
        if total == 0 {
            0.0
        } else {
            cross as f64 / total as f64
        }
    }
}

/// Splits the nodes in two halves by id, enforces a perfect partition for
/// `attack_duration`, lifts it, and samples the share of connections that
/// cross every 30 minutes. After the lift the attacker keeps dropping a
/// `natural_onpath_fraction` of the crossing node pairs it sits between
/// anyway.
pub fn healing_experiment(topology: &Topology, params: &HealingParams, natural_onpath_fraction: f64) -> HealingResult {
    let n = topology.nodes().len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(params.seed, STREAM_CHURN - 1));
    let lifetimes = if params.churn { params.lifetimes.assign(&order) } else { vec![None; n] };

    let mut net = Net {
        topo: topology,
        half: n / 2,
        out: vec![BTreeSet::new(); n],
        inc: vec![BTreeSet::new(); n],
        rng: stream(params.seed, STREAM_PEERS),
        seed: params.seed,
        onpath: natural_onpath_fraction,
        phase: Phase::Before,
    };
    for a in 0..n {
        net.refill(a, None);
    }
    let pre_attack = net.cross_fraction();

    // Attack: every crossing connection dies and openers pick again.
    net.phase = Phase::Attack;
    let mut dropped = Vec::new();
    for a in 0..n {
        for &b in &net.out[a] {
            if net.crossing(a, b) {
                dropped.push((a, b));
            }
        }
    }
    for &(a, b) in &dropped {
        net.drop_conn(a, b);
    }
    for (a, b) in dropped {
        net.refill(a, Some(b));
    }

    let mut churn_rngs: Vec<_> = (0..n as u64).map(|i| stream(params.seed, STREAM_CHURN + i)).collect();
    let mut reboots: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    let key = |t: f64| t.to_bits();
    for (i, rng) in churn_rngs.iter_mut().enumerate() {
        if let Some(g) = next_reboot_gap(rng, lifetimes[i]) {
            reboots.push(Reverse((key(g), i)));
        }
    }

    let lifted_at = params.attack_duration;
    let end = lifted_at + params.observe;
    let mut series = Vec::new();
    let mut next_sample = lifted_at;
    loop {
        let next_reboot = reboots.peek().map(|Reverse((t, _))| f64::from_bits(*t));
        // Samples and the lift happen before reboots at the same instant.
        if next_reboot.is_none_or(|t| t >= next_sample) {
            if next_sample > end + 1e-9 {
                break;
            }
            if net.phase == Phase::Attack {
                net.phase = Phase::After;
            }
            series.push((next_sample - lifted_at, net.cross_fraction()));
            next_sample += SAMPLE_INTERVAL;
            continue;
        }
        let Reverse((t, node)) = reboots.pop().unwrap();
        let t = f64::from_bits(t);
        if t >= lifted_at && net.phase == Phase::Attack {
            net.phase = Phase::After;
        }
        net.reboot(node);
        if let Some(g) = next_reboot_gap(&mut churn_rngs[node], lifetimes[node]) {
            reboots.push(Reverse((key(t + g), node)));
        }
    }
    HealingResult { pre_attack, lifted_at, series }
}
