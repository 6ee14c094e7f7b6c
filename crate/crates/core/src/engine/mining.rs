use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::protocol::Miner;
use crate::topology::{NodeId, PoolId, Topology};

/// Cumulative mining-power table: pools in id order, then regular nodes with
/// a positive share in id order. Keeping the order fixed lets runs that only
/// differ in gateway placement share their random numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct MinerTable {
    entries: Vec<(Miner, f64)>,
}

impl MinerTable {
    pub fn new(topology: &Topology) -> Self {
        let mut shares: Vec<(Miner, f64)> =
            topology.pools().iter().map(|p| (Miner::Pool(p.id), p.hash_share)).collect();
        for (i, s) in topology.node_shares().into_iter().enumerate() {
            if s > 0.0 {
                shares.push((Miner::Node(NodeId(i as u32)), s));
            }
        }
        Self::from_shares(shares)
    }

    pub fn from_shares(shares: Vec<(Miner, f64)>) -> Self {
        let total: f64 = shares.iter().map(|(_, s)| s).sum();
        let mut acc = 0.0;
        let entries = shares
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|(m, s)| {
                acc += s / total;
                (m, acc)
            })
            .collect();
        MinerTable { entries }
    }

    pub fn pools(shares: &[f64]) -> Self {
        Self::from_shares(shares.iter().enumerate().map(|(i, s)| (Miner::Pool(PoolId(i as u32)), *s)).collect())
    }

    /// Miner owning the slot that `u` in `[0, 1)` falls in.
    pub fn pick(&self, u: f64) -> Miner {
        let i = self.entries.partition_point(|(_, c)| *c <= u);
        self.entries[i.min(self.entries.len() - 1)].0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Time to the next block and who mines it. The uniform for the miner is
/// drawn first, then the gap.
pub fn next_block_event<R: Rng>(rng: &mut R, block_interval_mean: f64, miners: &MinerTable) -> (f64, Miner) {
    let u: f64 = rng.random();
    let gap = Exp::new(1.0 / block_interval_mean).expect("positive mean").sample(rng);
    (gap, miners.pick(u))
}
