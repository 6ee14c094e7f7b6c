//! Attacker runtimes: the online partitioning attacker with leakage
//! detection, the two block-delay attackers, and hijack timing.

use std::collections::{BTreeMap, BTreeSet};

use crate::protocol::{BlockHash, BLOCK_TIMEOUT};
use crate::topology::{hijack_coverage, AsId, HijackCoverage, NodeId, Prefix, Topology, TopologyError};
use crate::wire::{self, InvEntry, InvType, WireMessage};

pub const DEFAULT_THRESHOLD: f64 = 600.0;
pub const DEFAULT_RESTORE_MARGIN: f64 = 300.0;
pub const DEFAULT_CONVERGENCE_DELAY: f64 = 90.0;
/// Restores are not attempted this close to the victim's deadline, leaving
/// time for the block to cross the link.
pub const RESTORE_GUARD: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Forward,
    Drop,
}

/// Block hashes carried by a frame, if it is a BLOCK or an INV.
pub fn announced_blocks(frame: &WireMessage) -> Vec<BlockHash> {
    match frame.command() {
        "block" => wire::decode_block(frame.payload())
            .map(|h| vec![BlockHash(h.hash())])
            .unwrap_or_default(),
        "inv" => wire::decode_inventory(frame.payload())
            .map(|es| es.into_iter().filter(|e| e.kind == InvType::Block).map(|e| BlockHash(e.hash)).collect())
            .unwrap_or_default(),
        _ => Vec::new(),
    }
}

/// State of the partitioning attacker.
///
/// `P` is the target, `L` the detected leakage points and `U` the targets the
/// attacker has not heard from within `threshold`. Only `P \ (L ∪ U)` is
/// known to be isolated.
#[derive(Debug, Clone)]
pub struct PartitionAttacker {
    pub p: BTreeSet<NodeId>,
    pub l: BTreeSet<NodeId>,
    pub u: BTreeSet<NodeId>,
    pub last_seen: BTreeMap<NodeId, f64>,
    pub threshold: f64,
    pub hijacked: Vec<Prefix>,
    gave_up: bool,
}

impl PartitionAttacker {
    pub fn new(p: BTreeSet<NodeId>, threshold: f64, hijacked: Vec<Prefix>, now: f64) -> Self {
        let last_seen = p.iter().map(|n| (*n, now)).collect();
        PartitionAttacker { p, l: BTreeSet::new(), u: BTreeSet::new(), last_seen, threshold, hijacked, gave_up: false }
    }

    /// `P \ L`: targets not yet caught leaking.
    pub fn inside(&self) -> BTreeSet<NodeId> {
        self.p.difference(&self.l).copied().collect()
    }

    /// `P \ (L ∪ U)`: the verifiably isolated nodes.
    pub fn isolated(&self) -> BTreeSet<NodeId> {
        self.p.iter().filter(|n| !self.l.contains(n) && !self.u.contains(n)).copied().collect()
    }

    /// True once nothing is left that can be verified isolated.
    pub fn gave_up(&self) -> bool {
        self.gave_up
    }

    /// Handles one diverted frame heading into `P`. `external` answers whether
    /// a block hash carries information from outside the given node set.
    pub fn partition_tick(
        &mut self,
        src: NodeId,
        frame: &WireMessage,
        now: f64,
        external: &dyn Fn(&BlockHash, &BTreeSet<NodeId>) -> bool,
    ) -> Verdict {
        let verdict = if self.p.contains(&src) && !self.l.contains(&src) {
            // Liveness is tracked per observed sender.
            self.last_seen.insert(src, now);
            self.u.remove(&src);
            if self.detect_leakage(src, frame, external) {
                Verdict::Drop
            } else {
                Verdict::Forward
            }
        } else {
            Verdict::Drop
        };
        self.sweep(now);
        verdict
    }

    /// Marks `src` as a leakage point when the frame carries a block mined
    /// outside `P \ L`. Returns whether the frame must be dropped.
    pub fn detect_leakage(
        &mut self,
        src: NodeId,
        frame: &WireMessage,
        external: &dyn Fn(&BlockHash, &BTreeSet<NodeId>) -> bool,
    ) -> bool {
        let inside = self.inside();
        if announced_blocks(frame).iter().any(|h| external(h, &inside)) {
            self.l.insert(src);
            self.u.remove(&src);
            true
        } else {
            false
        }
    }

    /// Moves silent targets into `U`. Run after every event.
    pub fn sweep(&mut self, now: f64) {
        for n in &self.p {
            if self.l.contains(n) {
                continue;
            }
            if now - self.last_seen[n] > self.threshold {
                self.u.insert(*n);
            }
        }
        if self.isolated().is_empty() {
            self.gave_up = true;
        }
    }
}

/// Direction-specific key of an intercepted connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Leg {
    pub from: NodeId,
    pub to: NodeId,
    pub conn: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stash {
    pub original: BlockHash,
    pub swapped_at: f64,
    /// The victim gives up on the request at this time.
    pub deadline: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DelayOutcome {
    Untouched,
    Swapped { original: BlockHash },
    Restored { original: BlockHash, swapped_at: f64 },
}

/// The GETDATA-rewriting attacker. Each block request is pointed at an old
/// block; a later transaction request on the same leg is turned back into the
/// original request shortly before the victim's deadline.
#[derive(Debug, Clone)]
pub struct DelayAttacker {
    pub restore_margin: f64,
    pub decoy: BlockHash,
    stashes: BTreeMap<Leg, Vec<Stash>>,
}

impl DelayAttacker {
    pub fn new(decoy: BlockHash, restore_margin: f64) -> Self {
        DelayAttacker { restore_margin, decoy, stashes: BTreeMap::new() }
    }

    /// `[open, close)` during which a stash may be restored.
    pub fn window(&self, s: &Stash) -> (f64, f64) {
        (s.deadline - self.restore_margin, s.deadline - RESTORE_GUARD)
    }

    pub fn stashes(&self, leg: &Leg) -> &[Stash] {
        self.stashes.get(leg).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Earliest time a carrier could restore something on `leg`.
    pub fn next_window_open(&self, leg: &Leg, now: f64) -> Option<f64> {
        self.stashes(leg)
            .iter()
            .filter(|s| self.window(s).1 > now)
            .map(|s| self.window(s).0.max(now))
            .min_by(f64::total_cmp)
    }

    /// Rewrites a frame travelling from the victim towards the block sender.
    pub fn delay_on_outgoing(&mut self, leg: Leg, frame: &WireMessage, now: f64) -> (WireMessage, DelayOutcome) {
        if frame.command() != "getdata" {
            return (frame.clone(), DelayOutcome::Untouched);
        }
        let Ok(entries) = wire::decode_inventory(frame.payload()) else {
            return (frame.clone(), DelayOutcome::Untouched);
        };
        let margin = self.restore_margin;
        let stash = self.stashes.entry(leg).or_default();
        stash.retain(|s| s.deadline - RESTORE_GUARD > now);

        if let Some(e) = entries.iter().find(|e| e.kind == InvType::Block && e.hash != self.decoy.0) {
            let (out, _) = wire::rewrite_getdata_hash(frame, &e.hash, &self.decoy.0).expect("getdata");
            let original = BlockHash(e.hash);
            stash.push(Stash { original, swapped_at: now, deadline: now + BLOCK_TIMEOUT });
            return (out, DelayOutcome::Swapped { original });
        }
        if let Some(e) = entries.iter().find(|e| e.kind == InvType::Tx) {
            let ready = stash
                .iter()
                .enumerate()
                .filter(|(_, s)| s.deadline - margin <= now)
                .min_by(|a, b| a.1.deadline.total_cmp(&b.1.deadline))
                .map(|(i, _)| i);
            if let Some(i) = ready {
                let s = stash.remove(i);
                let to = InvEntry { kind: InvType::Block, hash: s.original.0 };
                let (out, _) = wire::rewrite_getdata_entry(frame, &e.hash, to).expect("getdata");
                return (out, DelayOutcome::Restored { original: s.original, swapped_at: s.swapped_at });
            }
        }
        (frame.clone(), DelayOutcome::Untouched)
    }

    /// Forgets everything stashed on a leg (the connection closed).
    pub fn forget(&mut self, leg: &Leg) {
        self.stashes.remove(leg);
    }
}

/// Corrupts BLOCK frames travelling towards the victim; everything else
/// passes unchanged.
pub fn delay_on_incoming(frame: &WireMessage, seed: u64) -> WireMessage {
    if frame.command() == "block" {
        wire::corrupt_block(frame, seed).expect("block")
    } else {
        frame.clone()
    }
}

/// When a set of rogue announcements takes effect and when it is withdrawn.
#[derive(Debug, Clone)]
pub struct HijackSchedule {
    pub announced_at: f64,
    pub effective_at: f64,
    pub lifted_at: Option<f64>,
    pub coverage: HijackCoverage,
}

/// Announces `prefixes` from `attacker_as` at `at_time`. Routes converge as a
/// step `convergence_delay` seconds later.
pub fn launch_hijack(
    topology: &Topology,
    prefixes: &[Prefix],
    attacker_as: AsId,
    at_time: f64,
    convergence_delay: f64,
    seed: u64,
) -> Result<HijackSchedule, TopologyError> {
    for p in prefixes {
        Prefix::routable(p.base(), p.len())?;
    }
    let coverage = hijack_coverage(topology, prefixes, attacker_as, seed)?;
    Ok(HijackSchedule { announced_at: at_time, effective_at: at_time + convergence_delay, lifted_at: None, coverage })
}

impl HijackSchedule {
    pub fn lift(&mut self, at: f64) {
        self.lifted_at = Some(at);
    }

    pub fn active(&self, now: f64) -> bool {
        now >= self.effective_at && self.lifted_at.is_none_or(|t| now < t)
    }

    pub fn coverage_at(&self, now: f64) -> Option<&HijackCoverage> {
        self.active(now).then_some(&self.coverage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Block, Miner};

    fn inv_frame(h: BlockHash) -> WireMessage {
        wire::inv(&[InvEntry { kind: InvType::Block, hash: h.0 }])
    }

    #[test]
    fn crossing_packet_is_dropped() {
        let p: BTreeSet<NodeId> = [NodeId(0), NodeId(1), NodeId(2)].into();
        let mut a = PartitionAttacker::new(p, 600.0, vec![], 0.0);
        let never = |_: &BlockHash, _: &BTreeSet<NodeId>| false;
        assert_eq!(a.partition_tick(NodeId(3), &inv_frame(BlockHash([1; 32])), 1.0, &never), Verdict::Drop);
        assert_eq!(a.partition_tick(NodeId(1), &inv_frame(BlockHash([1; 32])), 1.0, &never), Verdict::Forward);
    }

    #[test]
    fn external_inv_marks_leak() {
        let p: BTreeSet<NodeId> = [NodeId(0), NodeId(1)].into();
        let mut a = PartitionAttacker::new(p, 600.0, vec![], 0.0);
        let always = |_: &BlockHash, _: &BTreeSet<NodeId>| true;
        assert_eq!(a.partition_tick(NodeId(0), &inv_frame(BlockHash([1; 32])), 1.0, &always), Verdict::Drop);
        assert!(a.l.contains(&NodeId(0)));
        // Later frames from a leakage point are dropped whatever they carry.
        let never = |_: &BlockHash, _: &BTreeSet<NodeId>| false;
        let tx = wire::getdata(&[InvEntry { kind: InvType::Tx, hash: [3; 32] }]);
        assert_eq!(a.partition_tick(NodeId(0), &tx, 2.0, &never), Verdict::Drop);
        // Transaction traffic is never inspected.
        assert_eq!(a.partition_tick(NodeId(1), &tx, 2.0, &always), Verdict::Forward);
    }

    #[test]
    fn silence_moves_into_unmonitored() {
        let p: BTreeSet<NodeId> = [NodeId(0), NodeId(1)].into();
        let mut a = PartitionAttacker::new(p, 600.0, vec![], 0.0);
        let never = |_: &BlockHash, _: &BTreeSet<NodeId>| false;
        a.partition_tick(NodeId(0), &inv_frame(BlockHash([1; 32])), 601.0, &never);
        assert_eq!(a.u, BTreeSet::from([NodeId(1)]));
        a.partition_tick(NodeId(1), &inv_frame(BlockHash([1; 32])), 602.0, &never);
        assert!(a.u.is_empty());
        a.sweep(1300.0);
        assert!(a.gave_up());
    }

    #[test]
    fn swap_then_restore() {
        let g = Block::genesis();
        let b42 = Block::mine(&g, Miner::Node(NodeId(1)), 0.0, 42);
        let mut d = DelayAttacker::new(g.hash, 300.0);
        let leg = Leg { from: NodeId(0), to: NodeId(1), conn: 7 };
        let req = wire::getdata(&[InvEntry { kind: InvType::Block, hash: b42.hash.0 }]);
        let (out, o) = d.delay_on_outgoing(leg, &req, 100.0);
        assert_eq!(o, DelayOutcome::Swapped { original: b42.hash });
        assert_eq!(wire::decode_inventory(out.payload()).unwrap()[0].hash, g.hash.0);
        assert_eq!(d.next_window_open(&leg, 100.0), Some(1000.0));

        let tx = wire::getdata(&[InvEntry { kind: InvType::Tx, hash: [5; 32] }]);
        assert_eq!(d.delay_on_outgoing(leg, &tx, 999.0).1, DelayOutcome::Untouched);
        let (out, o) = d.delay_on_outgoing(leg, &tx, 1000.0);
        assert_eq!(o, DelayOutcome::Restored { original: b42.hash, swapped_at: 100.0 });
        assert_eq!(
            wire::decode_inventory(out.payload()).unwrap(),
            vec![InvEntry { kind: InvType::Block, hash: b42.hash.0 }]
        );
        assert!(d.stashes(&leg).is_empty());
    }

    #[test]
    fn incoming_only_touches_blocks() {
        let g = Block::genesis();
        let frame = wire::block(&g.header);
        assert!(!delay_on_incoming(&frame, 1).checksum_valid());
        let inv = inv_frame(g.hash);
        assert_eq!(delay_on_incoming(&inv, 1), inv);
    }
}
