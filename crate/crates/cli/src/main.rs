use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use btcrs_core::engine::{
    healing_experiment, healing_topology, run, run_seeds, with_multihoming, AttackPlan, Direction, HealingParams,
    HealingResult, SimConfig,
};
use btcrs_core::metrics::{self, Format};
use btcrs_core::planner::{enumerate_power_partitions, plan_json, plan_partition, power_partition_json, PlanError};
use btcrs_core::scenario::{self, resolve_coalition, Coalition, Scenario};
use btcrs_core::topology::{NodeId, Topology};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "btcrs", version, about = "Routing attacks on a simulated Bitcoin network")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario, with its attack if it declares one, once per seed.
    Run(RunArgs),
    /// List target sets whose mining power falls in a range, cheapest first.
    PlanPartition(PlanArgs),
    /// Track cross-partition connections after a partition is lifted.
    Heal(HealArgs),
    /// Measure how long a victim lags behind as more of its connections are intercepted.
    DelayNode(DelayNodeArgs),
    /// Orphan rate under a delay coalition as pools multihome more widely.
    MultihomingSweep(SweepArgs),
}

#[derive(Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let bad = || format!("expected a seed or an inclusive range a..b, got {s:?}");
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a.trim().parse::<u64>().map_err(|_| bad())?, b.trim().parse::<u64>().map_err(|_| bad())?),
        None => {
            let v = s.trim().parse::<u64>().map_err(|_| bad())?;
            (v, v)
        }
    };
    if b < a {
        return Err(format!("seed range {s} is empty"));
    }
    Ok(Seeds((a..=b).collect()))
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse::<Format>().map_err(|e| e.to_string())
}

#[derive(Args)]
struct Output {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// json or csv. Defaults to the output file's extension.
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
}

impl Output {
    fn format(&self, fallback: Format) -> Format {
        self.format.unwrap_or(match self.out.as_ref().and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            Some("json") => Format::Json,
            _ => fallback,
        })
    }

    fn write(&self, bytes: &[u8]) -> Result<(), Failure> {
        match &self.out {
            Some(p) => std::fs::write(p, bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display()))),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| Failure::Runtime(e.to_string()))
            }
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "1..20", value_parser = parse_seeds)]
    seeds: Seeds,
    #[command(flatten)]
    output: Output,
    /// Simulation parameter overrides, `key=value`.
    overrides: Vec<String>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Mining-power range `lo:hi`.
    #[arg(long, conflicts_with = "target")]
    power: Option<String>,
    /// Plan for this comma-separated list of nodes instead.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HealArgs {
    #[arg(long, default_value = "1..20", value_parser = parse_seeds)]
    seeds: Seeds,
    /// Fraction of cross-partition connections that naturally cross the attacker.
    #[arg(long, default_value_t = 0.0)]
    onpath: f64,
    #[arg(long, default_value_t = 100)]
    ases: u32,
    #[arg(long, default_value_t = 10)]
    per_as: u32,
    #[command(flatten)]
    output: Output,
    /// Experiment overrides, `key=value` (churn, attack_duration, observe, lifetimes).
    overrides: Vec<String>,
}

#[derive(Args)]
struct DelayNodeArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Victim node. Defaults to the scenario's victim.
    #[arg(long)]
    victim: Option<String>,
    #[arg(long, default_value = "0,0.5,0.8,1.0", value_delimiter = ',')]
    fractions: Vec<f64>,
    /// incoming or outgoing. Defaults to the scenario's, else outgoing.
    #[arg(long)]
    direction: Option<String>,
    #[arg(long, default_value = "1..20", value_parser = parse_seeds)]
    seeds: Seeds,
    #[command(flatten)]
    output: Output,
    overrides: Vec<String>,
}

#[derive(Args)]
struct SweepArgs {
    /// Defaults to the bundled paperlike.scn.
    #[arg(long, default_value = "paperlike.scn")]
    scenario: PathBuf,
    #[arg(long, default_value = "1,3,5,7", value_delimiter = ',')]
    degrees: Vec<usize>,
    /// Country code or comma-separated AS numbers. Defaults to the scenario's coalition.
    #[arg(long)]
    coalition: Option<String>,
    #[arg(long, default_value = "1..20", value_parser = parse_seeds)]
    seeds: Seeds,
    #[command(flatten)]
    output: Output,
    overrides: Vec<String>,
}

enum Failure {
    Usage(String),
    Scenario(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Scenario(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            Failure::Usage(m) => ("usage", m),
            Failure::Scenario(m) => ("scenario", m),
            Failure::Runtime(m) => ("runtime", m),
        };
        write!(f, "error: {kind}: {}", msg.split_whitespace().collect::<Vec<_>>().join(" "))
    }
}

fn runtime(e: impl fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // Keep only the message, without the usage block clap appends.
            let text = e.render().to_string();
            let msg = text.split("\n\n").next().unwrap_or_default().trim_start_matches("error: ").to_string();
            return fail(Failure::Usage(msg));
        }
    };
    match configure_threads().and_then(|_| dispatch(cli.cmd)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}

fn fail(f: Failure) -> ExitCode {
    eprintln!("{f}");
    ExitCode::from(f.code())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("BTCRS_THREADS") else {
        return Ok(());
    };
    let n = v
        .trim()
        .parse::<usize>()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Usage(format!("BTCRS_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(runtime)
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::PlanPartition(a) => cmd_plan(a),
        Cmd::Heal(a) => cmd_heal(a),
        Cmd::DelayNode(a) => cmd_delay_node(a),
        Cmd::MultihomingSweep(a) => cmd_sweep(a),
    }
}

/// Reads a scenario file. A bare file name that does not exist locally falls
/// back to the scenarios bundled with the library.
fn load(path: &Path) -> Result<Scenario, Failure> {
    let bare = path.components().count() == 1 && !path.exists();
    let text = if bare { path.to_str().and_then(scenario::bundled) } else { None };
    let loaded = match text {
        Some(t) => scenario::parse_scenario(t),
        None => scenario::load_scenario(path),
    };
    loaded.map_err(|e| match e {
        scenario::ScenarioError::Io { .. } => Failure::Scenario(e.to_string()),
        _ => Failure::Scenario(format!("{}: {e}", path.display())),
    })
}

fn label(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario").to_string()
}

fn split_override(kv: &str) -> Result<(&str, &str), Failure> {
    kv.split_once('=').ok_or_else(|| Failure::Usage(format!("override {kv:?} is not key=value")))
}

fn apply_overrides(cfg: &mut SimConfig, overrides: &[String]) -> Result<(), Failure> {
    for kv in overrides {
        let (k, v) = split_override(kv)?;
        cfg.params.set(k, v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(())
}

/// Same `key=value` rules as the simulation parameters, for any serde struct.
fn set_field<T: Serialize + DeserializeOwned>(value: &mut T, kv: &str) -> Result<(), Failure> {
    let (k, v) = split_override(kv)?;
    let mut doc = serde_json::to_value(&*value).map_err(runtime)?;
    let obj = doc.as_object_mut().expect("struct serialises to an object");
    if !obj.contains_key(k) {
        return Err(Failure::Usage(format!("unknown parameter {k}")));
    }
    let parsed = serde_json::from_str::<Value>(v).unwrap_or_else(|_| Value::String(v.to_string()));
    obj.insert(k.to_string(), parsed);
    *value = serde_json::from_value(doc).map_err(|e| Failure::Usage(format!("{k}: {e}")))?;
    Ok(())
}

fn node(t: &Topology, name: &str) -> Result<NodeId, Failure> {
    t.node_by_name(name.trim()).ok_or_else(|| Failure::Usage(format!("unknown node {name}")))
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let s = load(&a.scenario)?;
    let mut cfg = s.config.clone();
    apply_overrides(&mut cfg, &a.overrides)?;
    let outs = run_seeds(&s.topology, &cfg, &a.seeds.0).map_err(runtime)?;
    let name = label(&a.scenario);
    let reports: Vec<_> = outs.into_iter().map(|o| (name.clone(), o.report)).collect();
    a.output.write(&metrics::emit(&reports, a.output.format(Format::Json)).map_err(runtime)?)
}

fn plan_failure(e: PlanError) -> Failure {
    match e {
        PlanError::BadRange { .. } | PlanError::EmptyTarget => Failure::Usage(e.to_string()),
        _ => Failure::Runtime(e.to_string()),
    }
}

fn cmd_plan(a: PlanArgs) -> Result<(), Failure> {
    let s = load(&a.scenario)?;
    let t = &s.topology;
    let plans: Vec<Value> = match (&a.power, &a.target) {
        (_, Some(target)) => {
            let p = target.split(',').map(|n| node(t, n)).collect::<Result<BTreeSet<_>, _>>()?;
            vec![plan_json(t, &plan_partition(t, &p).map_err(plan_failure)?)]
        }
        (power, None) => {
            let (lo, hi) = match power {
                Some(r) => {
                    let bad = || Failure::Usage(format!("--power expects lo:hi, got {r:?}"));
                    let (lo, hi) = r.split_once(':').ok_or_else(bad)?;
                    (lo.parse::<f64>().map_err(|_| bad())?, hi.parse::<f64>().map_err(|_| bad())?)
                }
                None => (0.0, 1.0),
            };
            enumerate_power_partitions(t, lo, hi)
                .map_err(plan_failure)?
                .iter()
                .map(|pp| power_partition_json(t, pp))
                .collect()
        }
    };
    let mut text = metrics::to_canonical_json(&plans).map_err(runtime)?;
    text.push('\n');
    Output { out: a.out, format: None }.write(text.as_bytes())
}

fn cmd_heal(a: HealArgs) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&a.onpath) {
        return Err(Failure::Usage(format!("--onpath must lie in [0, 1], got {}", a.onpath)));
    }
    let mut base = HealingParams::default();
    for kv in &a.overrides {
        set_field(&mut base, kv)?;
    }
    let topology = healing_topology(a.ases, a.per_as).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut digest_doc = serde_json::to_value(&base).map_err(runtime)?;
    let obj = digest_doc.as_object_mut().unwrap();
    obj.remove("seed");
    obj.insert("onpath".into(), json!(a.onpath));
    obj.insert("ases".into(), json!(a.ases));
    obj.insert("per_as".into(), json!(a.per_as));
    let digest = metrics::config_digest(&digest_doc);

    let results: Vec<(u64, HealingResult)> = a
        .seeds
        .0
        .par_iter()
        .map(|&seed| (seed, healing_experiment(&topology, &HealingParams { seed, ..base.clone() }, a.onpath)))
        .collect();

    let bytes = match a.output.format(Format::Json) {
        Format::Json => {
            let list: Vec<Value> = results
                .iter()
                .map(|(seed, r)| {
                    json!({
                        "seed": seed,
                        "config_digest": digest,
                        "onpath": a.onpath,
                        "pre_attack": r.pre_attack,
                        "lifted_at": r.lifted_at,
                        "series": r.series,
                        "recovery": r.recovery(),
                    })
                })
                .collect();
            let mut s = metrics::to_canonical_json(&list).map_err(runtime)?;
            s.push('\n');
            s.into_bytes()
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["seed", "onpath", "since_lift", "fraction", "recovery", "config_digest"]).map_err(runtime)?;
            for (seed, r) in &results {
                for ((t, f), (_, rec)) in r.series.iter().zip(r.recovery()) {
                    w.write_record([
                        seed.to_string(),
                        a.onpath.to_string(),
                        t.to_string(),
                        f.to_string(),
                        rec.to_string(),
                        digest.clone(),
                    ])
                    .map_err(runtime)?;
                }
            }
            w.into_inner().map_err(runtime)?
        }
    };
    a.output.write(&bytes)
}

fn parse_direction(s: &str) -> Result<Direction, Failure> {
    serde_json::from_value(Value::String(s.to_ascii_lowercase()))
        .map_err(|_| Failure::Usage(format!("direction must be incoming or outgoing, got {s:?}")))
}

fn cmd_delay_node(a: DelayNodeArgs) -> Result<(), Failure> {
    let s = load(&a.scenario)?;
    let t = &s.topology;
    let (scn_victim, scn_direction, start) = match &s.config.attack {
        AttackPlan::DelayNode { victim, direction, start, .. } => (Some(*victim), Some(*direction), *start),
        _ => (s.config.victims.first().copied(), None, 0.0),
    };
    let victim = match &a.victim {
        Some(name) => node(t, name)?,
        None => scn_victim.ok_or_else(|| Failure::Usage("the scenario names no victim; pass --victim".into()))?,
    };
    let direction = match &a.direction {
        Some(d) => parse_direction(d)?,
        None => scn_direction.unwrap_or(Direction::Outgoing),
    };
    if let Some(f) = a.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Failure::Usage(format!("fraction {f} is outside [0, 1]")));
    }

    let mut cfg = s.config.clone();
    apply_overrides(&mut cfg, &a.overrides)?;
    if !cfg.victims.contains(&victim) {
        cfg.victims.push(victim);
    }
    let mut reports = Vec::new();
    for &fraction in &a.fractions {
        cfg.attack = AttackPlan::DelayNode { victim, fraction, direction, start };
        let outs = run_seeds(t, &cfg, &a.seeds.0).map_err(runtime)?;
        reports.extend(outs.into_iter().map(|o| (format!("fraction={fraction}"), o.report)));
    }
    a.output.write(&metrics::emit(&reports, a.output.format(Format::Json)).map_err(runtime)?)
}

fn parse_coalition(s: &str) -> Coalition {
    let ases: Result<Vec<u32>, _> = s.split(',').map(|x| x.trim().parse::<u32>()).collect();
    match ases {
        Ok(v) => Coalition::Ases(v),
        Err(_) => Coalition::Country(s.trim().to_string()),
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let s = load(&a.scenario)?;
    let coalition = match &a.coalition {
        Some(c) => resolve_coalition(&s.topology, &parse_coalition(c)),
        None => s.coalition(),
    };
    if coalition.is_empty() {
        return Err(Failure::Usage("coalition matches no AS; pass --coalition".into()));
    }
    if a.degrees.contains(&0) {
        return Err(Failure::Usage("multihoming degree must be at least 1".into()));
    }
    let mut cfg = s.config.clone();
    apply_overrides(&mut cfg, &a.overrides)?;
    cfg.attack = AttackPlan::DelayCoalition { ases: coalition, start: 0.0 };

    let jobs: Vec<(usize, u64)> = a.degrees.iter().flat_map(|&d| a.seeds.0.iter().map(move |&s| (d, s))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(degree, seed)| {
            let t = with_multihoming(&s.topology, degree, seed).map_err(runtime)?;
            let mut c = cfg.clone();
            c.params.seed = seed;
            Ok((degree, run(&t, &c).map_err(runtime)?.report))
        })
        .collect::<Result<Vec<_>, Failure>>()?;

    let bytes = match a.output.format(Format::Csv) {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["degree", "seed", "orphan_rate", "prop_delay_p50", "config_digest"]).map_err(runtime)?;
            for (degree, r) in &rows {
                w.write_record([
                    degree.to_string(),
                    r.seed.to_string(),
                    r.orphan_rate.to_string(),
                    r.prop_delay_p50.map(|v| v.to_string()).unwrap_or_default(),
                    r.config_digest.clone(),
                ])
                .map_err(runtime)?;
            }
            w.into_inner().map_err(runtime)?
        }
        Format::Json => {
            let reports: Vec<_> = rows.into_iter().map(|(d, r)| (format!("degree={d}"), r)).collect();
            metrics::emit(&reports, Format::Json).map_err(runtime)?
        }
    };
    a.output.write(&bytes)
}
