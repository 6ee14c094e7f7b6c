//! Per-node gossip state machine: INV / GETDATA / BLOCK with a single
//! outstanding request per block and a 20 minute delivery deadline.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Serialize, Serializer};

use crate::topology::{NodeId, PoolId};
use crate::wire::BlockHeader;

pub const BLOCK_TIMEOUT: f64 = 1200.0;
pub const MAX_OUTBOUND: usize = 8;
pub const MAX_PEERS: usize = 125;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockHash(pub [u8; 32]);

impl BlockHash {
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.short())
    }
}

impl fmt::Display for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for BlockHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Miner {
    Node(NodeId),
    Pool(PoolId),
}

impl Miner {
    fn code(self) -> u32 {
        match self {
            Miner::Node(n) => n.0 << 1,
            Miner::Pool(p) => (p.0 << 1) | 1,
        }
    }
}

impl fmt::Display for Miner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Miner::Node(n) => write!(f, "node:{}", n.0),
            Miner::Pool(p) => write!(f, "pool:{}", p.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub hash: BlockHash,
    pub parent: Option<BlockHash>,
    pub height: u32,
    pub miner: Option<Miner>,
    pub created_at: f64,
    pub header: BlockHeader,
}

impl Block {
    pub fn genesis() -> Block {
        let header = BlockHeader { version: 1, prev: [0; 32], merkle: [0; 32], time: 0, bits: 0, nonce: 0 };
        Block { hash: BlockHash(header.hash()), parent: None, height: 0, miner: None, created_at: 0.0, header }
    }

    /// A new block on `parent`. `serial` makes the header unique per run.
    pub fn mine(parent: &Block, miner: Miner, created_at: f64, serial: u64) -> Block {
        let mut merkle = [0u8; 32];
        merkle[..8].copy_from_slice(&serial.to_le_bytes());
        let header = BlockHeader {
            version: 1,
            prev: parent.hash.0,
            merkle,
            time: created_at as u32,
            bits: parent.height + 1,
            nonce: miner.code(),
        };
        Block {
            hash: BlockHash(header.hash()),
            parent: Some(parent.hash),
            height: parent.height + 1,
            miner: Some(miner),
            created_at,
            header,
        }
    }
}

#[derive(Debug, Clone)]
struct Known {
    height: u32,
    parent: Option<BlockHash>,
    arrived: f64,
}

/// Blocks a node holds and the head it follows.
#[derive(Debug, Clone)]
pub struct ChainView {
    known: HashMap<BlockHash, Known>,
    tip: BlockHash,
    /// Blocks waiting for their parent, keyed by the missing parent.
    waiting: BTreeMap<BlockHash, Vec<Block>>,
    waiting_set: BTreeSet<BlockHash>,
}

/// What inserting a block did to a chain view.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inserted {
    /// Newly connected blocks, in connection order.
    pub accepted: Vec<BlockHash>,
    pub tip_changed: bool,
    /// Set when the block was parked because its parent is unknown.
    pub missing_parent: Option<BlockHash>,
}

impl ChainView {
    pub fn new(genesis: &Block) -> Self {
        let mut known = HashMap::new();
        known.insert(genesis.hash, Known { height: 0, parent: None, arrived: f64::NEG_INFINITY });
        ChainView { known, tip: genesis.hash, waiting: BTreeMap::new(), waiting_set: BTreeSet::new() }
    }

    pub fn contains(&self, h: &BlockHash) -> bool {
        self.known.contains_key(h)
    }

    /// Known or parked.
    pub fn has_seen(&self, h: &BlockHash) -> bool {
        self.known.contains_key(h) || self.waiting_set.contains(h)
    }

    pub fn tip(&self) -> BlockHash {
        self.tip
    }

    pub fn tip_height(&self) -> u32 {
        self.known[&self.tip].height
    }

    pub fn height_of(&self, h: &BlockHash) -> Option<u32> {
        self.known.get(h).map(|k| k.height)
    }

    pub fn arrival_of(&self, h: &BlockHash) -> Option<f64> {
        self.known.get(h).map(|k| k.arrived)
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn known_blocks(&self) -> BTreeSet<BlockHash> {
        self.known.keys().copied().collect()
    }

    /// Hashes from genesis to the tip.
    pub fn main_chain(&self) -> Vec<BlockHash> {
        let mut out = Vec::new();
        let mut cur = Some(self.tip);
        while let Some(h) = cur {
            out.push(h);
            cur = self.known[&h].parent;
        }
        out.reverse();
        out
    }

    /// Known blocks that are not on the main chain.
    pub fn orphans(&self) -> BTreeSet<BlockHash> {
        let main: BTreeSet<_> = self.main_chain().into_iter().collect();
        self.known.keys().filter(|h| !main.contains(h)).copied().collect()
    }

    pub fn insert(&mut self, block: &Block, now: f64) -> Inserted {
        let mut out = Inserted::default();
        if self.has_seen(&block.hash) {
            return out;
        }
        let Some(parent) = block.parent else {
            return out;
        };
        if !self.known.contains_key(&parent) {
            self.waiting.entry(parent).or_default().push(block.clone());
            self.waiting_set.insert(block.hash);
            out.missing_parent = Some(self.root_of_missing(parent));
            return out;
        }
        let mut ready = vec![block.clone()];
        while let Some(b) = ready.pop() {
            self.waiting_set.remove(&b.hash);
            self.known.insert(b.hash, Known { height: b.height, parent: b.parent, arrived: now });
            out.accepted.push(b.hash);
            // First seen wins: only a strictly higher block moves the tip.
            if b.height > self.tip_height() {
                self.tip = b.hash;
                out.tip_changed = true;
            }
            if let Some(children) = self.waiting.remove(&b.hash) {
                ready.extend(children.into_iter().rev());
            }
        }
        out
    }

    fn root_of_missing(&self, mut h: BlockHash) -> BlockHash {
        // Walk up through parked blocks to the first hash nobody has.
        loop {
            let parked = self.waiting.values().flatten().find(|b| b.hash == h);
            match parked.and_then(|b| b.parent) {
                Some(p) if !self.known.contains_key(&p) => h = p,
                _ => return h,
            }
        }
    }
}

/// Head of a set of `(hash, height, arrival)` records: greatest height, then
/// earliest arrival.
pub fn select_tip(blocks: &[(BlockHash, u32, f64)]) -> Option<BlockHash> {
    blocks
        .iter()
        .min_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)))
        .map(|b| b.0)
}

/// Gossip payloads at the level the node logic cares about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Msg {
    Inv(BlockHash),
    GetBlock(BlockHash),
    /// A transaction request; the simulator only uses these as carriers.
    GetTx([u8; 32]),
    Block(BlockHash),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peer {
    pub outbound: bool,
    pub established_at: f64,
    /// Private links (pool infrastructure) do not count against slot limits.
    pub private: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pending {
    pub peer: NodeId,
    pub requested_at: f64,
    pub deadline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send { to: NodeId, msg: Msg },
    ArmTimeout { hash: BlockHash, deadline: f64 },
    Disconnect { peer: NodeId },
    TipChanged { tip: BlockHash, height: u32 },
    Accepted { hash: BlockHash },
    Discarded { hash: BlockHash },
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub chain: ChainView,
    pub peers: BTreeMap<NodeId, Peer>,
    pub pending: BTreeMap<BlockHash, Pending>,
    advertisers: BTreeMap<BlockHash, Vec<NodeId>>,
    pub address_book: Vec<NodeId>,
}

impl NodeState {
    pub fn new(id: NodeId, genesis: &Block, address_book: Vec<NodeId>) -> Self {
        NodeState {
            id,
            chain: ChainView::new(genesis),
            peers: BTreeMap::new(),
            pending: BTreeMap::new(),
            advertisers: BTreeMap::new(),
            address_book,
        }
    }

    pub fn outbound_count(&self) -> usize {
        self.peers.values().filter(|p| p.outbound && !p.private).count()
    }

    pub fn public_count(&self) -> usize {
        self.peers.values().filter(|p| !p.private).count()
    }

    pub fn accepts_inbound(&self) -> bool {
        self.public_count() < MAX_PEERS
    }

    pub fn advertisers(&self, h: &BlockHash) -> &[NodeId] {
        self.advertisers.get(h).map(Vec::as_slice).unwrap_or(&[])
    }

    fn request(&mut self, peer: NodeId, hash: BlockHash, now: f64, out: &mut Vec<Action>) {
        let deadline = now + BLOCK_TIMEOUT;
        self.pending.insert(hash, Pending { peer, requested_at: now, deadline });
        out.push(Action::Send { to: peer, msg: Msg::GetBlock(hash) });
        out.push(Action::ArmTimeout { hash, deadline });
    }

    pub fn on_connect(&mut self, peer: NodeId, outbound: bool, private: bool, now: f64) -> Vec<Action> {
        self.peers.insert(peer, Peer { outbound, established_at: now, private });
        vec![Action::Send { to: peer, msg: Msg::Inv(self.chain.tip()) }]
    }

    pub fn on_inv(&mut self, from: NodeId, hash: BlockHash, now: f64) -> Vec<Action> {
        let mut out = Vec::new();
        if !self.peers.contains_key(&from) {
            return out;
        }
        if self.chain.has_seen(&hash) {
            return out;
        }
        let ads = self.advertisers.entry(hash).or_default();
        if !ads.contains(&from) {
            ads.push(from);
        }
        if !self.pending.contains_key(&hash) {
            self.request(from, hash, now, &mut out);
        }
        out
    }

    pub fn on_getdata(&mut self, from: NodeId, hash: BlockHash) -> Vec<Action> {
        if self.peers.contains_key(&from) && self.chain.contains(&hash) {
            vec![Action::Send { to: from, msg: Msg::Block(hash) }]
        } else {
            Vec::new()
        }
    }

    /// A BLOCK frame from `from`. Frames failing the checksum are dropped on
    /// the floor and the outstanding request keeps waiting for its deadline.
    pub fn on_block(&mut self, from: NodeId, block: &Block, checksum_ok: bool, now: f64) -> Vec<Action> {
        let mut out = Vec::new();
        if !checksum_ok {
            out.push(Action::Discarded { hash: block.hash });
            return out;
        }
        self.accept(Some(from), block, now, &mut out);
        out
    }

    /// A block this node (or its pool) just mined.
    pub fn on_mined(&mut self, block: &Block, now: f64) -> Vec<Action> {
        let mut out = Vec::new();
        self.accept(None, block, now, &mut out);
        out
    }

    fn accept(&mut self, from: Option<NodeId>, block: &Block, now: f64, out: &mut Vec<Action>) {
        if self.chain.has_seen(&block.hash) {
            self.pending.remove(&block.hash);
            return;
        }
        let before = self.chain.tip();
        let ins = self.chain.insert(block, now);
        self.pending.remove(&block.hash);
        self.advertisers.remove(&block.hash);
        if let Some(missing) = ins.missing_parent {
            if !self.pending.contains_key(&missing) {
                if let Some(peer) = from.filter(|p| self.peers.contains_key(p)) {
                    self.request(peer, missing, now, out);
                }
            }
            return;
        }
        for h in &ins.accepted {
            self.pending.remove(h);
            self.advertisers.remove(h);
            out.push(Action::Accepted { hash: *h });
        }
        if ins.tip_changed && self.chain.tip() != before {
            let tip = self.chain.tip();
            out.push(Action::TipChanged { tip, height: self.chain.tip_height() });
            for &peer in self.peers.keys() {
                if Some(peer) != from {
                    out.push(Action::Send { to: peer, msg: Msg::Inv(tip) });
                }
            }
        }
    }

    /// The deadline for `hash` passed. Stale timers (block arrived, or the
    /// request was reissued) are ignored.
    pub fn on_timeout(&mut self, hash: BlockHash, deadline: f64, now: f64) -> Vec<Action> {
        let mut out = Vec::new();
        let Some(p) = self.pending.get(&hash).copied() else {
            return out;
        };
        if p.deadline != deadline || p.deadline > now {
            return out;
        }
        self.pending.remove(&hash);
        self.peers.remove(&p.peer);
        out.push(Action::Disconnect { peer: p.peer });
        self.drop_peer_requests(p.peer, now, &mut out);
        self.rerequest(hash, p.peer, now, &mut out);
        out
    }

    /// The connection to `peer` went away for any other reason.
    pub fn on_disconnect(&mut self, peer: NodeId, now: f64) -> Vec<Action> {
        let mut out = Vec::new();
        if self.peers.remove(&peer).is_none() {
            return out;
        }
        self.drop_peer_requests(peer, now, &mut out);
        out
    }

    fn drop_peer_requests(&mut self, peer: NodeId, now: f64, out: &mut Vec<Action>) {
        for ads in self.advertisers.values_mut() {
            ads.retain(|a| *a != peer);
        }
        let stalled: Vec<BlockHash> = self.pending.iter().filter(|(_, p)| p.peer == peer).map(|(h, _)| *h).collect();
        for h in stalled {
            self.pending.remove(&h);
            self.rerequest(h, peer, now, out);
        }
    }

    fn rerequest(&mut self, hash: BlockHash, failed: NodeId, now: f64, out: &mut Vec<Action>) {
        let next = self
            .advertisers
            .get(&hash)
            .and_then(|ads| ads.iter().find(|a| **a != failed && self.peers.contains_key(a)).copied());
        if let Some(peer) = next {
            self.request(peer, hash, now, out);
        }
    }

    /// Uniform pick from the address book among nodes not yet connected, not
    /// `exclude`d, and not sharing a /16 with an existing outbound peer.
    pub fn choose_outbound<R: Rng>(
        &self,
        rng: &mut R,
        slash16: impl Fn(NodeId) -> u32,
        exclude: impl Fn(NodeId) -> bool,
    ) -> Option<NodeId> {
        let taken: BTreeSet<u32> = self
            .peers
            .iter()
            .filter(|(_, p)| p.outbound && !p.private)
            .map(|(n, _)| slash16(*n))
            .collect();
        let candidates: Vec<NodeId> = self
            .address_book
            .iter()
            .copied()
            .filter(|n| *n != self.id && !self.peers.contains_key(n) && !taken.contains(&slash16(*n)) && !exclude(*n))
            .collect();
        candidates.choose(rng).copied()
    }
}
