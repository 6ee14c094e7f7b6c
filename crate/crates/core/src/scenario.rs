//! JSON scenario files: topology, pools, optional fixed connections, run
//! parameters and an attack.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engine::{AttackPlan, Direction, SimConfig, SimParams};
use crate::planner;
use crate::topology::{AsId, NodeId, Prefix, Relationship, Topology, TopologyBuilder, TopologyError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    /// Malformed JSON or a value of the wrong shape.
    #[error("line {line}, column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    /// Well-formed but inconsistent; `at` is a JSON path into the file.
    #[error("{at}: {msg}")]
    Invalid { at: String, msg: String },
}

impl ScenarioError {
    fn at(at: impl Into<String>, msg: impl ToString) -> Self {
        ScenarioError::Invalid { at: at.into(), msg: msg.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsDecl {
    pub id: u32,
    pub country: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDecl {
    pub a: u32,
    pub b: u32,
    pub rel: Relationship,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefixDecl {
    pub base: Ipv4Addr,
    pub len: u8,
    pub origin_as: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDecl {
    pub id: String,
    pub ip: Ipv4Addr,
    pub prefix: String,
    #[serde(rename = "as")]
    pub asn: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolDecl {
    pub id: String,
    pub gateways: Vec<String>,
    pub hash_share: f64,
    #[serde(default)]
    pub private_peers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coalition {
    Ases(Vec<u32>),
    Country(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Partition,
    Delay,
    DelayNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackDecl {
    pub kind: AttackKind,
    #[serde(default)]
    pub target: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coalition: Option<Coalition>,
    /// AS that originates the hijack; defaults to the lowest coalition AS.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub announcer: Option<u32>,
    /// Prefixes to announce; computed by the planner when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefixes: Option<Vec<Prefix>>,
    #[serde(default)]
    pub start: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub victim: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    /// Parameter overrides that only make sense with the attack.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Map<String, Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub ases: Vec<AsDecl>,
    #[serde(default)]
    pub links: Vec<LinkDecl>,
    pub prefixes: Vec<PrefixDecl>,
    pub nodes: Vec<NodeDecl>,
    #[serde(default)]
    pub pools: Vec<PoolDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_share: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connections: Option<Vec<(String, String)>>,
    #[serde(default)]
    pub params: serde_json::Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackDecl>,
    /// Attack-free node that victims are compared against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default)]
    pub victims: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub topology: Topology,
    pub config: SimConfig,
}

impl Scenario {
    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.topology.node_by_name(name)
    }

    /// The coalition named by the attack, resolved to AS numbers.
    pub fn coalition(&self) -> BTreeSet<AsId> {
        match self.file.attack.as_ref().and_then(|a| a.coalition.as_ref()) {
            Some(c) => resolve_coalition(&self.topology, c),
            None => BTreeSet::new(),
        }
    }
}

pub fn resolve_coalition(topology: &Topology, c: &Coalition) -> BTreeSet<AsId> {
    match c {
        Coalition::Ases(v) => v.iter().map(|a| AsId(*a)).collect(),
        Coalition::Country(cc) => topology.graph().ases_in_country(cc),
    }
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })
}

pub fn load_topology(path: impl AsRef<Path>) -> Result<Topology, ScenarioError> {
    let file = parse_file(&read(path.as_ref())?)?;
    build_topology(&file)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    parse_scenario(&read(path.as_ref())?)
}

/// Scenarios shipped with the crate, by file name.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "paperlike.scn" => Some(include_str!("../scenarios/paperlike.scn")),
        "single_victim.scn" => Some(include_str!("../scenarios/single_victim.scn")),
        _ => None,
    }
}

pub fn parse_file(text: &str) -> Result<ScenarioFile, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError::Syntax {
        line: e.line(),
        column: e.column(),
        msg: e.to_string().split(" at line ").next().unwrap_or_default().to_string(),
    })
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file = parse_file(text)?;
    let topology = build_topology(&file)?;
    let config = build_config(&file, &topology)?;
    Ok(Scenario { file, topology, config })
}

/// Builds and validates the topology, pointing errors at the offending entry.
pub fn build_topology(f: &ScenarioFile) -> Result<Topology, ScenarioError> {
    let known: BTreeSet<u32> = f.ases.iter().map(|a| a.id).collect();
    let check_as = |asn: u32, at: String| {
        if known.contains(&asn) {
            Ok(())
        } else {
            Err(ScenarioError::at(at, TopologyError::UnknownAs(AsId(asn))))
        }
    };
    let mut b = TopologyBuilder::new();
    for a in &f.ases {
        b.add_as(a.id, &a.country);
    }
    for (i, l) in f.links.iter().enumerate() {
        check_as(l.a, format!("$.links[{i}].a"))?;
        check_as(l.b, format!("$.links[{i}].b"))?;
        b.link(l.a, l.b, l.rel);
    }
    for (i, p) in f.prefixes.iter().enumerate() {
        check_as(p.origin_as, format!("$.prefixes[{i}].origin_as"))?;
        let prefix = Prefix::new(p.base, p.len).map_err(|e| ScenarioError::at(format!("$.prefixes[{i}]"), e))?;
        b.prefix(prefix, p.origin_as);
    }
    let mut node_at = BTreeMap::new();
    for (i, n) in f.nodes.iter().enumerate() {
        check_as(n.asn, format!("$.nodes[{i}].as"))?;
        let prefix: Prefix = n.prefix.parse().map_err(|e| ScenarioError::at(format!("$.nodes[{i}].prefix"), e))?;
        b.node_with_share(&n.id, n.ip, prefix, n.asn, n.hash_share);
        node_at.insert(n.id.clone(), i);
    }
    let pool_ids: BTreeSet<&str> = f.pools.iter().map(|p| p.id.as_str()).collect();
    for (i, p) in f.pools.iter().enumerate() {
        for (j, g) in p.gateways.iter().enumerate() {
            if !node_at.contains_key(g) {
                return Err(ScenarioError::at(format!("$.pools[{i}].gateways[{j}]"), TopologyError::UnknownNode(g.clone())));
            }
        }
        for (j, q) in p.private_peers.iter().enumerate() {
            if !pool_ids.contains(q.as_str()) {
                return Err(ScenarioError::at(
                    format!("$.pools[{i}].private_peers[{j}]"),
                    TopologyError::UnknownPool(q.clone()),
                ));
            }
        }
        let gws: Vec<&str> = p.gateways.iter().map(String::as_str).collect();
        let peers: Vec<&str> = p.private_peers.iter().map(String::as_str).collect();
        b.pool(&p.id, &gws, p.hash_share, &peers);
    }
    if let Some(r) = f.residual_share {
        b.residual_share(r);
    }
    b.build().map_err(|e| {
        let at = match &e {
            TopologyError::Overlap { node, .. }
            | TopologyError::OutsidePrefix { node, .. }
            | TopologyError::GatewayShare(node)
            | TopologyError::DuplicateNode(node) => {
                node_at.get(node).map(|i| format!("$.nodes[{i}]")).unwrap_or_else(|| "$.nodes".into())
            }
            TopologyError::WrongOrigin { .. } | TopologyError::PrefixNotAnnounced(_) => "$.nodes".into(),
            TopologyError::ConflictingOrigin { .. } | TopologyError::PrefixTooSpecific(_) => "$.prefixes".into(),
            TopologyError::ShareSum(_) | TopologyError::ShareRange(_) | TopologyError::ResidualUnassigned(_) => {
                "$.pools[*].hash_share".into()
            }
            TopologyError::SharedGateway { .. } | TopologyError::EmptyPool(_) | TopologyError::DuplicatePool(_) => {
                "$.pools".into()
            }
            TopologyError::SelfLink(_) | TopologyError::DuplicateLink(..) | TopologyError::ProviderCycle(_) => {
                "$.links".into()
            }
            _ => "$".into(),
        };
        ScenarioError::at(at, e)
    })
}

fn node_ref(t: &Topology, name: &str, at: String) -> Result<NodeId, ScenarioError> {
    t.node_by_name(name).ok_or_else(|| ScenarioError::at(at, TopologyError::UnknownNode(name.to_string())))
}

fn apply_params(p: &mut SimParams, overrides: &serde_json::Map<String, Value>, at: &str) -> Result<(), ScenarioError> {
    for (k, v) in overrides {
        p.set(k, &v.to_string()).map_err(|e| ScenarioError::at(format!("{at}.{k}"), e))?;
    }
    Ok(())
}

pub fn build_config(f: &ScenarioFile, t: &Topology) -> Result<SimConfig, ScenarioError> {
    let mut params = SimParams::default();
    apply_params(&mut params, &f.params, "$.params")?;
    let mut cfg = SimConfig::new(params);

    if let Some(list) = &f.connections {
        let mut out = Vec::new();
        for (i, (a, b)) in list.iter().enumerate() {
            let x = node_ref(t, a, format!("$.connections[{i}][0]"))?;
            let y = node_ref(t, b, format!("$.connections[{i}][1]"))?;
            if x == y {
                return Err(ScenarioError::at(format!("$.connections[{i}]"), "a node cannot connect to itself"));
            }
            out.push((x, y));
        }
        cfg.connections = Some(out);
    }
    if let Some(r) = &f.reference {
        cfg.reference = Some(node_ref(t, r, "$.reference".into())?);
    }
    for (i, v) in f.victims.iter().enumerate() {
        cfg.victims.push(node_ref(t, v, format!("$.victims[{i}]"))?);
    }

    let Some(a) = &f.attack else {
        return Ok(cfg);
    };
    if let Some(over) = &a.params {
        apply_params(&mut cfg.params, over, "$.attack.params")?;
    }
    let coalition = a.coalition.as_ref().map(|c| resolve_coalition(t, c)).unwrap_or_default();
    if let Some(asn) = coalition.iter().find(|x| !t.graph().contains(**x)) {
        return Err(ScenarioError::at("$.attack.coalition", TopologyError::UnknownAs(*asn)));
    }
    cfg.attack = match a.kind {
        AttackKind::Partition => {
            let mut target = BTreeSet::new();
            for (i, n) in a.target.iter().enumerate() {
                target.insert(node_ref(t, n, format!("$.attack.target[{i}]"))?);
            }
            let announcer = match a.announcer {
                Some(x) => AsId(x),
                None => *coalition
                    .first()
                    .ok_or_else(|| ScenarioError::at("$.attack", "partition needs a coalition or an announcer"))?,
            };
            if !t.graph().contains(announcer) {
                return Err(ScenarioError::at("$.attack.announcer", TopologyError::UnknownAs(announcer)));
            }
            let prefixes = match &a.prefixes {
                Some(p) => p.clone(),
                None => planner::plan_partition(t, &target)
                    .map_err(|e| ScenarioError::at("$.attack.target", e))?
                    .prefixes_to_hijack,
            };
            let mut ases = coalition;
            ases.insert(announcer);
            AttackPlan::Partition { ases, announcer, target, prefixes, start: a.start, stop: a.stop }
        }
        AttackKind::Delay => {
            if coalition.is_empty() {
                return Err(ScenarioError::at("$.attack.coalition", "delay attack needs a non-empty coalition"));
            }
            AttackPlan::DelayCoalition { ases: coalition, start: a.start }
        }
        AttackKind::DelayNode => {
            let name = a.victim.as_ref().ok_or_else(|| ScenarioError::at("$.attack.victim", "missing"))?;
            let victim = node_ref(t, name, "$.attack.victim".into())?;
            let fraction = a.fraction.unwrap_or(1.0);
            if !(0.0..=1.0).contains(&fraction) {
                return Err(ScenarioError::at("$.attack.fraction", "must lie in [0, 1]"));
            }
            AttackPlan::DelayNode {
                victim,
                fraction,
                direction: a.direction.unwrap_or(Direction::Outgoing),
                start: a.start,
            }
        }
    };
    Ok(cfg)
}
