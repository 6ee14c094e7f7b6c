//! Deterministic discrete-event simulation of the Bitcoin network over the
//! AS-level topology, with the routing attackers wired into message delivery.

mod churn;
mod healing;
mod mining;
mod multihoming;
mod params;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use churn::{churn_process, next_reboot_gap};
pub use healing::{healing_experiment, healing_topology, HealingParams, HealingResult};
pub use mining::{next_block_event, MinerTable};
pub use multihoming::with_multihoming;
pub use params::{LifetimeClass, LifetimeTable, ParamError, SimParams, CALIBRATED_PER_HOP_DELAY};

use crate::adversary::{
    delay_on_incoming, launch_hijack, DelayAttacker, DelayOutcome, HijackSchedule, Leg, PartitionAttacker, Verdict,
};
use crate::metrics::{self, MetricsReport, PartitionOutcome};
use crate::protocol::{Action, Block, BlockHash, ChainView, Miner, Msg, NodeState, MAX_OUTBOUND};
use crate::topology::{AsId, NodeId, Prefix, Topology, TopologyError};
use crate::wire::{self, InvEntry, InvType, WireMessage};

pub(crate) const STREAM_MINING: u64 = 1;
pub(crate) const STREAM_PEERS: u64 = 2;
pub(crate) const STREAM_TX: u64 = 3;
pub(crate) const STREAM_ATTACK: u64 = 4;
pub(crate) const STREAM_TOPOLOGY: u64 = 5;
pub(crate) const STREAM_CHURN: u64 = 1 << 32;

/// Interval between cross-partition samples.
pub const SAMPLE_INTERVAL: f64 = 1800.0;

pub(crate) fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Which leg of a connection a node-level delay attacker tampers with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Victim to sender: GETDATA rewriting.
    Outgoing,
    /// Sender to victim: BLOCK corruption.
    Incoming,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AttackPlan {
    None,
    Partition {
        /// The AS announcing the prefixes; every listed AS also drops what it
        /// naturally carries.
        ases: BTreeSet<AsId>,
        announcer: AsId,
        target: BTreeSet<NodeId>,
        prefixes: Vec<Prefix>,
        start: f64,
        stop: Option<f64>,
    },
    /// Every AS in the coalition rewrites block requests it carries.
    DelayCoalition { ases: BTreeSet<AsId>, start: f64 },
    /// One victim; each of its connections is intercepted with probability
    /// `fraction`.
    DelayNode { victim: NodeId, fraction: f64, direction: Direction, start: f64 },
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub params: SimParams,
    pub attack: AttackPlan,
    /// Fixed connection list; disables random peer selection and refills.
    pub connections: Option<Vec<(NodeId, NodeId)>>,
    /// Attack-free node that victims are compared against.
    pub reference: Option<NodeId>,
    pub victims: Vec<NodeId>,
}

impl SimConfig {
    pub fn new(params: SimParams) -> Self {
        SimConfig { params, attack: AttackPlan::None, connections: None, reference: None, victims: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisconnectReason {
    Timeout,
    Reboot,
    PeerLeft,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum TraceEvent {
    Mined { t: f64, hash: BlockHash, miner: String },
    Connected { t: f64, a: NodeId, b: NodeId },
    Sent { t: f64, from: NodeId, to: NodeId, msg: String },
    Delivered { t: f64, from: NodeId, to: NodeId, msg: String, checksum_ok: bool },
    Dropped { t: f64, from: NodeId, to: NodeId, msg: String },
    Swapped { t: f64, from: NodeId, to: NodeId, original: BlockHash },
    Restored { t: f64, from: NodeId, to: NodeId, original: BlockHash },
    Corrupted { t: f64, from: NodeId, to: NodeId },
    Requested { t: f64, node: NodeId, hash: BlockHash, deadline: f64 },
    Accepted { t: f64, node: NodeId, hash: BlockHash },
    Discarded { t: f64, node: NodeId, from: NodeId },
    Disconnected { t: f64, node: NodeId, peer: NodeId, reason: DisconnectReason },
}

/// A block as recorded by the run.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedBlock {
    pub block: Block,
    /// Nodes where the block first appeared (a pool's gateways, or the miner).
    pub origins: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub trace: Vec<TraceEvent>,
    pub blocks: Vec<MinedBlock>,
    pub chains: Vec<ChainView>,
    pub tip_logs: Vec<Vec<(f64, u32)>>,
    pub attacker: Option<PartitionAttacker>,
    /// Time of the last mined block.
    pub mining_end: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("{0}")]
    Config(String),
}

/// Link latency between two nodes: a floor plus a per-AS-hop term, and zero
/// between gateways of the same pool.
pub fn link_delay(topology: &Topology, params: &SimParams, a: NodeId, b: NodeId) -> f64 {
    let (na, nb) = (topology.node(a), topology.node(b));
    if na.pool.is_some() && na.pool == nb.pool {
        return 0.0;
    }
    let hops = topology.forwarding().hops(na.home_as, nb.home_as).unwrap_or(0);
    params.base_delay + params.per_hop_delay * hops as f64
}

#[derive(Debug, Clone)]
enum Payload {
    Plain(Msg),
    Frame(Vec<u8>),
}

#[derive(Debug, Clone)]
enum Ev {
    Deliver { from: NodeId, to: NodeId, conn: u64, payload: Payload },
    Mine { miner: Miner },
    Timeout { node: NodeId, hash: BlockHash, deadline: f64 },
    TxCarrier { leg: Leg },
    Reboot { node: NodeId },
    AttackStart,
    AttackStop,
    Sample,
    Stop,
}

struct Queued {
    time: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed: the heap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct Conn {
    a: NodeId,
    b: NodeId,
    private: bool,
    delay: f64,
}

struct Sim<'a> {
    topo: &'a Topology,
    cfg: &'a SimConfig,
    p: &'a SimParams,
    now: f64,
    seq: u64,
    queue: BinaryHeap<Queued>,
    nodes: Vec<NodeState>,
    conn_of: Vec<BTreeMap<NodeId, u64>>,
    conns: BTreeMap<u64, Conn>,
    next_conn: u64,
    genesis: Block,
    blocks: Vec<MinedBlock>,
    by_hash: HashMap<BlockHash, usize>,
    arrivals: Vec<Vec<f64>>,
    tip_logs: Vec<Vec<(f64, u32)>>,
    miners: MinerTable,
    mined: u32,
    mining_end: f64,
    rng_mine: ChaCha8Rng,
    rng_peers: ChaCha8Rng,
    rng_tx: ChaCha8Rng,
    rng_attack: ChaCha8Rng,
    churn_rngs: Vec<ChaCha8Rng>,
    lifetimes: Vec<Option<f64>>,
    hijack: Option<HijackSchedule>,
    partition: Option<PartitionAttacker>,
    partition_active: bool,
    delay: Option<DelayAttacker>,
    delay_active: bool,
    carriers: BTreeSet<Leg>,
    intercepted_conns: BTreeMap<u64, bool>,
    onpath_cache: HashMap<(AsId, AsId), bool>,
    counters: BTreeMap<String, u64>,
    trace: Vec<TraceEvent>,
    cross_series: Vec<(f64, f64)>,
    attack_start: Option<f64>,
}

/// Runs one simulation to completion.
pub fn run(topology: &Topology, config: &SimConfig) -> Result<RunOutcome, SimError> {
    config.params.validate()?;
    let mut sim = Sim::new(topology, config)?;
    sim.setup();
    sim.event_loop();
    Ok(sim.finish())
}

fn is_external(blocks: &[MinedBlock], by_hash: &HashMap<BlockHash, usize>, h: &BlockHash, inside: &BTreeSet<NodeId>) -> bool {
    let mut cur = by_hash.get(h).copied();
    while let Some(i) = cur {
        let b = &blocks[i];
        if b.origins.iter().any(|o| !inside.contains(o)) {
            return true;
        }
        cur = b.block.parent.and_then(|p| by_hash.get(&p).copied());
    }
    false
}

fn describe(msg: &Msg) -> String {
    match msg {
        Msg::Inv(h) => format!("inv {}", h.short()),
        Msg::GetBlock(h) => format!("getdata block {}", h.short()),
        Msg::GetTx(h) => format!("getdata tx {}", hex::encode(&h[..4])),
        Msg::Block(h) => format!("block {}", h.short()),
    }
}

impl<'a> Sim<'a> {
    fn new(topo: &'a Topology, cfg: &'a SimConfig) -> Result<Self, SimError> {
        let p = &cfg.params;
        let n = topo.nodes().len();
        let genesis = Block::genesis();
        let reachable = |a: NodeId, b: NodeId| {
            let (x, y) = (topo.node(a).home_as, topo.node(b).home_as);
            topo.forwarding().reachable(x, y) && topo.forwarding().reachable(y, x)
        };
        let nodes = topo
            .node_ids()
            .map(|id| {
                let book = topo.node_ids().filter(|o| *o != id && reachable(id, *o)).collect();
                NodeState::new(id, &genesis, book)
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut stream(p.seed, STREAM_CHURN - 1));
        }
        let lifetimes = if p.churn { p.lifetimes.assign(&order) } else { vec![None; n] };
        let churn_rngs = (0..n as u64).map(|i| stream(p.seed, STREAM_CHURN + i)).collect();

        let mut delay = None;
        match &cfg.attack {
            AttackPlan::DelayCoalition { .. } | AttackPlan::DelayNode { .. } => {
                delay = Some(DelayAttacker::new(genesis.hash, p.restore_margin));
            }
            AttackPlan::Partition { target, .. } => {
                if target.iter().any(|t| t.index() >= n) {
                    return Err(SimError::Config("partition target names an unknown node".into()));
                }
            }
            AttackPlan::None => {}
        }
        if let AttackPlan::DelayNode { victim, fraction, .. } = &cfg.attack {
            if victim.index() >= n || !(0.0..=1.0).contains(fraction) {
                return Err(SimError::Config("bad node-level delay attack".into()));
            }
        }
        for (a, b) in cfg.connections.iter().flatten() {
            if a.index() >= n || b.index() >= n || a == b {
                return Err(SimError::Config(format!("bad connection {a}-{b}")));
            }
        }

        Ok(Sim {
            topo,
            cfg,
            p,
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes,
            conn_of: vec![BTreeMap::new(); n],
            conns: BTreeMap::new(),
            next_conn: 0,
            genesis,
            blocks: Vec::new(),
            by_hash: HashMap::new(),
            arrivals: Vec::new(),
            tip_logs: vec![vec![(0.0, 0)]; n],
            miners: MinerTable::new(topo),
            mined: 0,
            mining_end: 0.0,
            rng_mine: stream(p.seed, STREAM_MINING),
            rng_peers: stream(p.seed, STREAM_PEERS),
            rng_tx: stream(p.seed, STREAM_TX),
            rng_attack: stream(p.seed, STREAM_ATTACK),
            churn_rngs,
            lifetimes,
            hijack: None,
            partition: None,
            partition_active: false,
            delay,
            delay_active: false,
            carriers: BTreeSet::new(),
            intercepted_conns: BTreeMap::new(),
            onpath_cache: HashMap::new(),
            counters: BTreeMap::new(),
            trace: Vec::new(),
            cross_series: Vec::new(),
            attack_start: None,
        })
    }

    fn count(&mut self, key: &str) {
        *self.counters.entry(key.to_string()).or_insert(0) += 1;
    }

    fn push(&mut self, time: f64, ev: Ev) {
        self.seq += 1;
        self.queue.push(Queued { time, seq: self.seq, ev });
    }

    fn log(&mut self, ev: TraceEvent) {
        if self.p.trace {
            self.trace.push(ev);
        }
    }

    fn setup(&mut self) {
        // Pool infrastructure: gateway cliques and private peerings.
        for pool in self.topo.pools() {
            for (i, &a) in pool.gateways.iter().enumerate() {
                for &b in &pool.gateways[i + 1..] {
                    self.connect(a, b, true);
                }
            }
            for peer in &pool.private_peers {
                if peer.index() > pool.id.index() {
                    for &a in &pool.gateways {
                        for &b in &self.topo.pool(*peer).gateways.clone() {
                            if a != b && !self.conn_of[a.index()].contains_key(&b) {
                                self.connect(a, b, true);
                            }
                        }
                    }
                }
            }
        }
        match &self.cfg.connections {
            Some(list) => {
                for &(a, b) in list {
                    if !self.conn_of[a.index()].contains_key(&b) {
                        self.connect(a, b, false);
                    }
                }
            }
            None => {
                for id in self.topo.node_ids() {
                    self.refill(id, None);
                }
            }
        }

        let (first, miner) = next_block_event(&mut self.rng_mine, self.p.block_interval_mean, &self.miners);
        self.push(first, Ev::Mine { miner });
        for id in self.topo.node_ids() {
            self.schedule_reboot(id);
        }
        match self.cfg.attack.clone() {
            AttackPlan::None => {}
            AttackPlan::Partition { start, stop, .. } => {
                self.attack_start = Some(start);
                self.push(start + self.p.convergence_delay, Ev::AttackStart);
                if let Some(stop) = stop {
                    self.push(stop, Ev::AttackStop);
                }
                self.push(0.0, Ev::Sample);
            }
            AttackPlan::DelayCoalition { start, .. } | AttackPlan::DelayNode { start, .. } => {
                self.attack_start = Some(start);
                self.push(start, Ev::AttackStart);
            }
        }
    }

    fn schedule_reboot(&mut self, id: NodeId) {
        if let Some(gap) = next_reboot_gap(&mut self.churn_rngs[id.index()], self.lifetimes[id.index()]) {
            self.push(self.now + gap, Ev::Reboot { node: id });
        }
    }

    fn event_loop(&mut self) {
        while let Some(q) = self.queue.pop() {
            debug_assert!(q.time >= self.now);
            self.now = q.time;
            if let Ev::Stop = q.ev {
                break;
            }
            self.dispatch(q.ev);
            if self.partition_active {
                let now = self.now;
                let att = self.partition.as_mut().unwrap();
                att.sweep(now);
                if att.gave_up() {
                    self.partition_active = false;
                    if let Some(h) = self.hijack.as_mut() {
                        h.lift(now);
                    }
                }
            }
        }
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::Deliver { from, to, conn, payload } => self.deliver(from, to, conn, payload),
            Ev::Mine { miner } => self.mine(miner),
            Ev::Timeout { node, hash, deadline } => {
                let actions = self.nodes[node.index()].on_timeout(hash, deadline, self.now);
                self.process(node, actions);
            }
            Ev::TxCarrier { leg } => self.tx_carrier(leg),
            Ev::Reboot { node } => self.reboot(node),
            Ev::AttackStart => self.attack_start_now(),
            Ev::AttackStop => {
                if let Some(h) = self.hijack.as_mut() {
                    h.lift(self.now);
                }
                self.partition_active = false;
                self.delay_active = false;
            }
            Ev::Sample => {
                self.sample();
                self.push(self.now + SAMPLE_INTERVAL, Ev::Sample);
            }
            Ev::Stop => {}
        }
    }

    fn attack_start_now(&mut self) {
        match &self.cfg.attack {
            AttackPlan::Partition { announcer, target, prefixes, start, .. } => {
                let schedule = launch_hijack(
                    self.topo,
                    prefixes,
                    *announcer,
                    *start,
                    self.p.convergence_delay,
                    self.p.seed,
                );
                match schedule {
                    Ok(s) => {
                        self.hijack = Some(s);
                        self.partition = Some(PartitionAttacker::new(
                            target.clone(),
                            self.p.threshold,
                            prefixes.clone(),
                            self.now,
                        ));
                        self.partition_active = true;
                    }
                    Err(_) => self.count("attack_rejected"),
                }
            }
            AttackPlan::DelayCoalition { .. } | AttackPlan::DelayNode { .. } => self.delay_active = true,
            AttackPlan::None => {}
        }
    }

    fn sample(&mut self) {
        let AttackPlan::Partition { target, .. } = &self.cfg.attack else {
            return;
        };
        let public: Vec<&Conn> = self.conns.values().filter(|c| !c.private).collect();
        let crossing = public.iter().filter(|c| target.contains(&c.a) != target.contains(&c.b)).count();
        let frac = if public.is_empty() { 0.0 } else { crossing as f64 / public.len() as f64 };
        self.cross_series.push((self.now, frac));
    }

    fn slash16(&self, n: NodeId) -> u32 {
        u32::from(self.topo.node(n).ip) >> 16
    }

    fn refill(&mut self, id: NodeId, exclude: Option<NodeId>) {
        if self.cfg.connections.is_some() {
            return;
        }
        while self.nodes[id.index()].outbound_count() < MAX_OUTBOUND {
            let pick = {
                let nodes = &self.nodes;
                let topo = self.topo;
                nodes[id.index()].choose_outbound(
                    &mut self.rng_peers,
                    |n| u32::from(topo.node(n).ip) >> 16,
                    |c| Some(c) == exclude || !nodes[c.index()].accepts_inbound(),
                )
            };
            match pick {
                Some(peer) => self.connect(id, peer, false),
                None => break,
            }
        }
        let _ = self.slash16(id);
    }

    fn connect(&mut self, a: NodeId, b: NodeId, private: bool) {
        let id = self.next_conn;
        self.next_conn += 1;
        let delay = if private && self.topo.node(a).pool != self.topo.node(b).pool {
            self.p.base_delay
        } else {
            link_delay(self.topo, self.p, a, b)
        };
        self.conns.insert(id, Conn { a, b, private, delay });
        self.conn_of[a.index()].insert(b, id);
        self.conn_of[b.index()].insert(a, id);
        if !private {
            self.count("connections_opened");
        }
        self.log(TraceEvent::Connected { t: self.now, a, b });
        let now = self.now;
        let acts_a = self.nodes[a.index()].on_connect(b, true, private, now);
        let acts_b = self.nodes[b.index()].on_connect(a, false, private, now);
        self.process(a, acts_a);
        self.process(b, acts_b);
    }

    /// Tears down the connection between `node` and `peer`. `node` has
    /// already forgotten `peer` when `node_done` is set.
    fn close(&mut self, node: NodeId, peer: NodeId, reason: DisconnectReason, node_done: bool) {
        let Some(id) = self.conn_of[node.index()].remove(&peer) else {
            return;
        };
        self.conn_of[peer.index()].remove(&node);
        let conn = self.conns.remove(&id).expect("live connection");
        if let Some(d) = self.delay.as_mut() {
            d.forget(&Leg { from: node, to: peer, conn: id });
            d.forget(&Leg { from: peer, to: node, conn: id });
        }
        self.log(TraceEvent::Disconnected { t: self.now, node, peer, reason });
        if reason == DisconnectReason::Timeout {
            self.count("timeout_disconnects");
        }
        let now = self.now;
        if !node_done {
            let acts = self.nodes[node.index()].on_disconnect(peer, now);
            self.process(node, acts);
        }
        let acts = self.nodes[peer.index()].on_disconnect(node, now);
        self.process(peer, acts);
        if conn.private {
            return;
        }
        // Whoever opened the connection looks for a replacement.
        let (opener, other) = (conn.a, conn.b);
        if reason != DisconnectReason::Reboot || opener != node {
            self.refill(opener, Some(other));
        }
    }

    fn reboot(&mut self, node: NodeId) {
        self.count("reboots");
        let peers: Vec<NodeId> = self.conn_of[node.index()]
            .iter()
            .filter(|(_, id)| !self.conns[id].private)
            .map(|(p, _)| *p)
            .collect();
        for peer in peers {
            self.close(node, peer, DisconnectReason::Reboot, false);
        }
        self.refill(node, None);
        self.schedule_reboot(node);
    }

    fn process(&mut self, node: NodeId, actions: Vec<Action>) {
        for a in actions {
            match a {
                Action::Send { to, msg } => self.send(node, to, msg),
                Action::ArmTimeout { hash, deadline } => {
                    self.log(TraceEvent::Requested { t: self.now, node, hash, deadline });
                    self.push(deadline, Ev::Timeout { node, hash, deadline });
                }
                Action::Disconnect { peer } => self.close(node, peer, DisconnectReason::Timeout, true),
                Action::TipChanged { height, .. } => self.tip_logs[node.index()].push((self.now, height)),
                Action::Accepted { hash } => {
                    if let Some(&i) = self.by_hash.get(&hash) {
                        self.arrivals[i].push(self.now);
                    }
                    self.log(TraceEvent::Accepted { t: self.now, node, hash });
                }
                Action::Discarded { .. } => {}
            }
        }
    }

    fn send(&mut self, from: NodeId, to: NodeId, msg: Msg) {
        let Some(&id) = self.conn_of[from.index()].get(&to) else {
            return;
        };
        let conn = self.conns[&id];
        self.count("messages_sent");
        self.log(TraceEvent::Sent { t: self.now, from, to, msg: describe(&msg) });
        let payload = if conn.private { Some(Payload::Plain(msg)) } else { self.intercept(from, to, id, msg) };
        if let Some(payload) = payload {
            self.push(self.now + conn.delay, Ev::Deliver { from, to, conn: id, payload });
        }
    }

    fn frame(&self, msg: &Msg) -> WireMessage {
        match msg {
            Msg::Inv(h) => wire::inv(&[InvEntry { kind: InvType::Block, hash: h.0 }]),
            Msg::GetBlock(h) => wire::getdata(&[InvEntry { kind: InvType::Block, hash: h.0 }]),
            Msg::GetTx(h) => wire::getdata(&[InvEntry { kind: InvType::Tx, hash: *h }]),
            Msg::Block(h) => {
                let header = match self.by_hash.get(h) {
                    Some(&i) => self.blocks[i].block.header,
                    None => self.genesis.header,
                };
                wire::block(&header)
            }
        }
    }

    fn coalition_on_path(&mut self, ases: &BTreeSet<AsId>, from: NodeId, to: NodeId) -> bool {
        let (x, y) = (self.topo.node(from).home_as, self.topo.node(to).home_as);
        if x == y {
            return false;
        }
        if let Some(&hit) = self.onpath_cache.get(&(x, y)) {
            return hit;
        }
        let hit = self
            .topo
            .forwarding()
            .path(x, y)
            .is_some_and(|p| p.iter().any(|a| ases.contains(a)));
        self.onpath_cache.insert((x, y), hit);
        hit
    }

    fn conn_intercepted(&mut self, conn: u64, fraction: f64) -> bool {
        if let Some(&v) = self.intercepted_conns.get(&conn) {
            return v;
        }
        // One uniform draw per connection, so larger fractions intercept a
        // superset of connections under the same seed.
        let u: f64 = {
            let mut r = stream(self.p.seed ^ 0x5eed_0000, STREAM_ATTACK + (conn << 8));
            r.random()
        };
        let hit = u < fraction;
        self.intercepted_conns.insert(conn, hit);
        hit
    }

    /// Routes a public message past any attacker. `None` means dropped.
    fn intercept(&mut self, from: NodeId, to: NodeId, conn: u64, msg: Msg) -> Option<Payload> {
        match self.cfg.attack.clone() {
            AttackPlan::Partition { ases, target, .. } if self.partition_active && target.contains(&to) => {
                let diverted = {
                    let src_as = self.topo.node(from).home_as;
                    let by_hijack = self
                        .hijack
                        .as_ref()
                        .and_then(|h| h.coverage_at(self.now))
                        .is_some_and(|c| c.diverts(self.topo, to, src_as));
                    by_hijack || self.coalition_on_path(&ases, from, to)
                };
                if !diverted {
                    return Some(Payload::Plain(msg));
                }
                let frame = self.frame(&msg);
                let (blocks, by_hash) = (&self.blocks, &self.by_hash);
                let oracle = |h: &BlockHash, inside: &BTreeSet<NodeId>| is_external(blocks, by_hash, h, inside);
                let verdict = self.partition.as_mut().unwrap().partition_tick(from, &frame, self.now, &oracle);
                match verdict {
                    Verdict::Drop => {
                        self.count("attacker_dropped");
                        self.log(TraceEvent::Dropped { t: self.now, from, to, msg: describe(&msg) });
                        None
                    }
                    Verdict::Forward => Some(Payload::Frame(frame.serialize())),
                }
            }
            AttackPlan::DelayCoalition { ases, .. } if self.delay_active => {
                let request = matches!(msg, Msg::GetBlock(_) | Msg::GetTx(_));
                if request && self.coalition_on_path(&ases, from, to) {
                    Some(self.rewrite_outgoing(from, to, conn, &msg))
                } else {
                    Some(Payload::Plain(msg))
                }
            }
            AttackPlan::DelayNode { victim, fraction, direction, .. } if self.delay_active => {
                let same_as = self.topo.node(from).home_as == self.topo.node(to).home_as;
                match direction {
                    Direction::Outgoing
                        if from == victim
                            && !same_as
                            && matches!(msg, Msg::GetBlock(_) | Msg::GetTx(_))
                            && self.conn_intercepted(conn, fraction) =>
                    {
                        Some(self.rewrite_outgoing(from, to, conn, &msg))
                    }
                    Direction::Incoming
                        if to == victim
                            && !same_as
                            && matches!(msg, Msg::Block(_))
                            && self.conn_intercepted(conn, fraction) =>
                    {
                        let seed = self.rng_attack.random();
                        let bad = delay_on_incoming(&self.frame(&msg), seed);
                        self.count("frames_corrupted");
                        self.log(TraceEvent::Corrupted { t: self.now, from, to });
                        Some(Payload::Frame(bad.serialize()))
                    }
                    _ => Some(Payload::Plain(msg)),
                }
            }
            _ => Some(Payload::Plain(msg)),
        }
    }

    fn rewrite_outgoing(&mut self, from: NodeId, to: NodeId, conn: u64, msg: &Msg) -> Payload {
        let frame = self.frame(msg);
        let leg = Leg { from, to, conn };
        let (out, outcome) = self.delay.as_mut().unwrap().delay_on_outgoing(leg, &frame, self.now);
        match outcome {
            DelayOutcome::Swapped { original } => {
                self.count("getdata_swapped");
                self.log(TraceEvent::Swapped { t: self.now, from, to, original });
                self.schedule_carrier(leg);
            }
            DelayOutcome::Restored { original, .. } => {
                self.count("getdata_restored");
                self.log(TraceEvent::Restored { t: self.now, from, to, original });
            }
            DelayOutcome::Untouched => {}
        }
        Payload::Frame(out.serialize())
    }

    /// Transaction requests are Poisson per leg; only the first one after a
    /// restore window opens matters, so only that one is generated.
    fn schedule_carrier(&mut self, leg: Leg) {
        if self.p.tx_getdata_rate <= 0.0 || self.carriers.contains(&leg) {
            return;
        }
        let Some(open) = self.delay.as_ref().unwrap().next_window_open(&leg, self.now) else {
            return;
        };
        let gap = Exp::new(self.p.tx_getdata_rate).expect("rate").sample(&mut self.rng_tx);
        self.carriers.insert(leg);
        self.push(open + gap, Ev::TxCarrier { leg });
    }

    fn tx_carrier(&mut self, leg: Leg) {
        self.carriers.remove(&leg);
        if self.conn_of[leg.from.index()].get(&leg.to) != Some(&leg.conn) {
            return;
        }
        let tx: [u8; 32] = self.rng_tx.random();
        self.count("tx_getdata");
        self.send(leg.from, leg.to, Msg::GetTx(tx));
        if !self.delay.as_ref().unwrap().stashes(&leg).is_empty() {
            self.schedule_carrier(leg);
        }
    }

    fn deliver(&mut self, from: NodeId, to: NodeId, conn: u64, payload: Payload) {
        if self.conn_of[to.index()].get(&from) != Some(&conn) {
            self.count("lost_in_flight");
            return;
        }
        let now = self.now;
        let (msgs, ok) = match payload {
            Payload::Plain(m) => (vec![m], true),
            Payload::Frame(bytes) => match wire::parse(&bytes) {
                Ok((frame, ok)) => (self.unframe(&frame), ok),
                Err(_) => (Vec::new(), false),
            },
        };
        if !ok {
            self.count("checksum_failures");
            self.log(TraceEvent::Discarded { t: now, node: to, from });
            return;
        }
        for msg in msgs {
            self.count("messages_delivered");
            self.log(TraceEvent::Delivered { t: now, from, to, msg: describe(&msg), checksum_ok: true });
            let node = &mut self.nodes[to.index()];
            let actions = match msg {
                Msg::Inv(h) => node.on_inv(from, h, now),
                Msg::GetBlock(h) => node.on_getdata(from, h),
                Msg::GetTx(_) => Vec::new(),
                Msg::Block(h) => match self.by_hash.get(&h) {
                    Some(&i) => {
                        let block = self.blocks[i].block.clone();
                        self.nodes[to.index()].on_block(from, &block, true, now)
                    }
                    None => Vec::new(),
                },
            };
            self.process(to, actions);
        }
    }

    fn unframe(&self, frame: &WireMessage) -> Vec<Msg> {
        match frame.command() {
            "inv" => wire::decode_inventory(frame.payload())
                .unwrap_or_default()
                .into_iter()
                .filter(|e| e.kind == InvType::Block)
                .map(|e| Msg::Inv(BlockHash(e.hash)))
                .collect(),
            "getdata" => wire::decode_inventory(frame.payload())
                .unwrap_or_default()
                .into_iter()
                .filter_map(|e| match e.kind {
                    InvType::Block => Some(Msg::GetBlock(BlockHash(e.hash))),
                    InvType::Tx => Some(Msg::GetTx(e.hash)),
                    InvType::Other(_) => None,
                })
                .collect(),
            "block" => wire::decode_block(frame.payload())
                .map(|h| vec![Msg::Block(BlockHash(h.hash()))])
                .unwrap_or_default(),
            _ => Vec::new(),
        }
    }

    fn block_by_hash(&self, h: &BlockHash) -> Block {
        match self.by_hash.get(h) {
            Some(&i) => self.blocks[i].block.clone(),
            None => self.genesis.clone(),
        }
    }

    fn mine(&mut self, miner: Miner) {
        let origins: Vec<NodeId> = match miner {
            Miner::Node(n) => vec![n],
            Miner::Pool(p) => self.topo.pool(p).gateways.clone(),
        };
        // A pool builds on the best head any of its gateways has seen.
        let parent_hash = origins
            .iter()
            .map(|o| {
                let c = &self.nodes[o.index()].chain;
                let tip = c.tip();
                (tip, c.tip_height(), c.arrival_of(&tip).unwrap_or(f64::NEG_INFINITY))
            })
            .min_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)))
            .map(|t| t.0)
            .unwrap();
        let parent = self.block_by_hash(&parent_hash);
        let block = Block::mine(&parent, miner, self.now, u64::from(self.mined) + 1);
        self.by_hash.insert(block.hash, self.blocks.len());
        self.blocks.push(MinedBlock { block: block.clone(), origins: origins.clone() });
        self.arrivals.push(Vec::new());
        self.mined += 1;
        self.mining_end = self.now;
        let label = self.miner_label(miner);
        self.log(TraceEvent::Mined { t: self.now, hash: block.hash, miner: label });
        let now = self.now;
        for o in origins {
            let acts = self.nodes[o.index()].on_mined(&block, now);
            self.process(o, acts);
        }
        if self.mined < self.p.run_blocks {
            let (gap, next) = next_block_event(&mut self.rng_mine, self.p.block_interval_mean, &self.miners);
            self.push(self.now + gap, Ev::Mine { miner: next });
        } else {
            self.push(self.now + self.p.drain_time, Ev::Stop);
        }
    }

    fn miner_label(&self, m: Miner) -> String {
        match m {
            Miner::Node(n) => self.topo.node(n).name.clone(),
            Miner::Pool(p) => self.topo.pool(p).name.clone(),
        }
    }

    fn finish(self) -> RunOutcome {
        let topo = self.topo;
        let observer = &self.nodes[0].chain;
        let main: BTreeSet<BlockHash> = observer.main_chain().into_iter().collect();
        let on_chain = self.blocks.iter().filter(|b| main.contains(&b.block.hash)).count();
        let orphan_rate = metrics::orphan_rate(self.blocks.len(), on_chain);

        let mut blocks_mined = BTreeMap::new();
        let mut blocks_in_chain = BTreeMap::new();
        for b in &self.blocks {
            let label = self.miner_label(b.block.miner.unwrap());
            *blocks_mined.entry(label.clone()).or_insert(0) += 1;
            let in_chain = blocks_in_chain.entry(label).or_insert(0);
            if main.contains(&b.block.hash) {
                *in_chain += 1;
            }
        }

        let (arr, mined_at): (Vec<Vec<f64>>, Vec<f64>) = self
            .blocks
            .iter()
            .zip(&self.arrivals)
            .filter(|(b, _)| main.contains(&b.block.hash))
            .map(|(b, a)| (a.clone(), b.block.created_at))
            .unzip();
        let (p50, partial) = metrics::p50_propagation(&arr, &mined_at, topo.nodes().len());

        let mut uninformed = BTreeMap::new();
        if let Some(reference) = self.cfg.reference {
            let start = self.attack_start.unwrap_or(0.0);
            for v in &self.cfg.victims {
                let f = metrics::uninformed_fraction(
                    &self.tip_logs[v.index()],
                    &self.tip_logs[reference.index()],
                    start,
                    self.mining_end,
                    &[],
                );
                uninformed.insert(topo.node(*v).name.clone(), f);
            }
        }

        let names = |s: &BTreeSet<NodeId>| s.iter().map(|n| topo.node(*n).name.clone()).collect::<Vec<_>>();
        let partition = self.partition.as_ref().map(|a| PartitionOutcome {
            target: names(&a.p),
            leakage: names(&a.l),
            unmonitored: names(&a.u),
            isolated: names(&a.isolated()),
            gave_up: a.gave_up(),
        });

        let report = MetricsReport {
            seed: self.p.seed,
            config_digest: digest(topo, self.cfg),
            orphan_rate,
            prop_delay_p50: p50,
            prop_delay_partial: partial,
            uninformed_fraction: uninformed,
            cross_partition_series: self.cross_series,
            blocks_mined,
            blocks_in_chain,
            counters: self.counters,
            partition,
        };
        RunOutcome {
            report,
            trace: self.trace,
            blocks: self.blocks,
            chains: self.nodes.into_iter().map(|n| n.chain).collect(),
            tip_logs: self.tip_logs,
            attacker: self.partition,
            mining_end: self.mining_end,
        }
    }
}

/// Digest of everything that defines a configuration except the seed.
pub fn digest(topology: &Topology, cfg: &SimConfig) -> String {
    let mut params = serde_json::to_value(&cfg.params).expect("params");
    params.as_object_mut().unwrap().remove("seed");
    params.as_object_mut().unwrap().remove("trace");
    let nodes: Vec<_> = topology
        .nodes()
        .iter()
        .map(|n| json!([n.name, n.ip.to_string(), n.home_prefix.to_string(), n.home_as.0, n.pool.map(|p| p.0)]))
        .collect();
    let pools: Vec<_> = topology.pools().iter().map(|p| json!([p.name, p.hash_share, p.private_peers])).collect();
    let links: Vec<_> = topology.graph().links().iter().map(|l| json!([l.a.0, l.b.0, l.rel])).collect();
    metrics::config_digest(&json!({
        "params": params,
        "attack": cfg.attack,
        "nodes": nodes,
        "pools": pools,
        "links": links,
        "connections": cfg.connections,
        "reference": cfg.reference,
        "victims": cfg.victims,
    }))
}

/// Runs `seeds` in parallel (capped by the rayon pool) and returns reports in
/// seed order.
pub fn run_seeds(topology: &Topology, config: &SimConfig, seeds: &[u64]) -> Result<Vec<RunOutcome>, SimError> {
    use rayon::prelude::*;
    seeds
        .par_iter()
        .map(|s| {
            let mut c = config.clone();
            c.params.seed = *s;
            run(topology, &c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{Relationship, TopologyBuilder};

    fn line(n: u32) -> Topology {
        let mut b = TopologyBuilder::new();
        for i in 1..=n {
            b.add_as(i, "ZZ");
            b.prefix(format!("{i}.0.0.0/16").parse().unwrap(), i);
            b.node(&format!("n{i}"), format!("{i}.0.0.1").parse().unwrap(), format!("{i}.0.0.0/16").parse().unwrap(), i);
            if i > 1 {
                b.link(i, i - 1, Relationship::CustomerOf);
            }
        }
        b.build().unwrap()
    }

    #[test]
    fn delay_formula() {
        let t = line(3);
        let mut p = SimParams::default();
        p.per_hop_delay = 2.0;
        assert_eq!(link_delay(&t, &p, NodeId(0), NodeId(2)), 0.05 + 4.0);
        assert_eq!(link_delay(&t, &p, NodeId(0), NodeId(0)), 0.05);
    }

    #[test]
    fn same_seed_same_report() {
        let t = line(4);
        let mut p = SimParams::default();
        p.run_blocks = 20;
        let cfg = SimConfig::new(p);
        let a = run(&t, &cfg).unwrap();
        let b = run(&t, &cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.blocks_mined.values().sum::<u64>(), 20);
    }
}
