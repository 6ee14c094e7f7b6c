//! Evaluation quantities and report serialisation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("unknown output format '{0}' (expected json or csv)")]
    UnknownFormat(String),
    #[error("serialisation failed: {0}")]
    Serialise(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            _ => Err(MetricsError::UnknownFormat(s.to_string())),
        }
    }
}

/// Outcome of a partition attack as the attacker sees it at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionOutcome {
    pub target: Vec<String>,
    pub leakage: Vec<String>,
    pub unmonitored: Vec<String>,
    pub isolated: Vec<String>,
    pub gave_up: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub config_digest: String,
    pub orphan_rate: f64,
    /// Median over main-chain blocks of the time for half the nodes to hold
    /// the block.
    pub prop_delay_p50: Option<f64>,
    /// Set when some main-chain block never reached every node.
    pub prop_delay_partial: bool,
    pub uninformed_fraction: BTreeMap<String, f64>,
    pub cross_partition_series: Vec<(f64, f64)>,
    pub blocks_mined: BTreeMap<String, u64>,
    pub blocks_in_chain: BTreeMap<String, u64>,
    pub counters: BTreeMap<String, u64>,
    pub partition: Option<PartitionOutcome>,
}

/// Fraction of mined blocks that did not make the main chain.
pub fn orphan_rate(mined: usize, on_chain: usize) -> f64 {
    if mined == 0 {
        0.0
    } else {
        (mined - on_chain.min(mined)) as f64 / mined as f64
    }
}

/// Value of a step function given as `(time, value)` change points.
fn value_at(log: &[(f64, u32)], t: f64) -> u32 {
    match log.partition_point(|(at, _)| *at <= t) {
        0 => 0,
        i => log[i - 1].1,
    }
}

/// Share of `[start, end]`, minus `downtime`, during which the victim's tip
/// height is below the reference's. Logs are `(time, tip height)` change
/// points in time order.
pub fn uninformed_fraction(
    victim: &[(f64, u32)],
    reference: &[(f64, u32)],
    start: f64,
    end: f64,
    downtime: &[(f64, f64)],
) -> f64 {
    if end <= start {
        return 0.0;
    }
    let mut cuts: Vec<f64> = vec![start, end];
    cuts.extend(victim.iter().chain(reference).map(|(t, _)| *t).filter(|t| *t > start && *t < end));
    for (a, b) in downtime {
        cuts.extend([*a, *b].into_iter().filter(|t| *t > start && *t < end));
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let down = |t: f64| downtime.iter().any(|(a, b)| t >= *a && t < *b);
    let (mut behind, mut up) = (0.0, 0.0);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if down(a) {
            continue;
        }
        up += b - a;
        if value_at(victim, a) < value_at(reference, a) {
            behind += b - a;
        }
    }
    if up == 0.0 {
        0.0
    } else {
        behind / up
    }
}

/// Median over blocks of the time until more than half of the nodes that
/// ever held the block had it. `arrivals[i]` lists the times nodes first
/// held block `i`, mined at `mined_at[i]`. The flag reports whether any block
/// missed some of the `nodes`, in which case the delay only describes the
/// part of the network the block reached.
pub fn p50_propagation(arrivals: &[Vec<f64>], mined_at: &[f64], nodes: usize) -> (Option<f64>, bool) {
    let mut partial = false;
    let mut delays = Vec::new();
    for (times, t0) in arrivals.iter().zip(mined_at) {
        if times.len() < nodes {
            partial = true;
        }
        if times.is_empty() {
            continue;
        }
        let mut ts = times.clone();
        ts.sort_by(f64::total_cmp);
        let k = (ts.len() / 2 + 1).min(ts.len());
        delays.push(ts[k - 1] - t0);
    }
    (median(&mut delays), partial)
}

pub fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { (xs[n / 2 - 1] + xs[n / 2]) / 2.0 })
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// SHA-256 of the canonical (sorted-key, compact) JSON form of `config`.
pub fn config_digest(config: &Value) -> String {
    let canonical = serde_json::to_string(config).expect("json value");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Canonical JSON: object keys sorted at every level.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, MetricsError> {
    let v = serde_json::to_value(value).map_err(|e| MetricsError::Serialise(e.to_string()))?;
    serde_json::to_string_pretty(&v).map_err(|e| MetricsError::Serialise(e.to_string()))
}

/// Flattened `(metric, value)` pairs in a fixed order.
pub fn metric_rows(r: &MetricsReport) -> Vec<(String, String)> {
    let mut rows = vec![
        ("orphan_rate".to_string(), r.orphan_rate.to_string()),
        ("prop_delay_p50".to_string(), r.prop_delay_p50.map(|v| v.to_string()).unwrap_or_default()),
        ("prop_delay_partial".to_string(), r.prop_delay_partial.to_string()),
    ];
    for (k, v) in &r.uninformed_fraction {
        rows.push((format!("uninformed_fraction.{k}"), v.to_string()));
    }
    for (t, v) in &r.cross_partition_series {
        rows.push((format!("cross_partition.{t}"), v.to_string()));
    }
    for (k, v) in &r.blocks_mined {
        rows.push((format!("blocks_mined.{k}"), v.to_string()));
    }
    for (k, v) in &r.blocks_in_chain {
        rows.push((format!("blocks_in_chain.{k}"), v.to_string()));
    }
    for (k, v) in &r.counters {
        rows.push((format!("counters.{k}"), v.to_string()));
    }
    rows
}

/// Serialises reports. JSON is an array of reports with sorted keys; CSV has
/// the columns `config,seed,metric,value`.
pub fn emit(reports: &[(String, MetricsReport)], format: Format) -> Result<Vec<u8>, MetricsError> {
    match format {
        Format::Json => {
            let list: Vec<Value> = reports
                .iter()
                .map(|(config, r)| {
                    let mut v = serde_json::to_value(r).expect("report");
                    v.as_object_mut().unwrap().insert("config".into(), Value::String(config.clone()));
                    v
                })
                .collect();
            let mut s = to_canonical_json(&list)?;
            s.push('\n');
            Ok(s.into_bytes())
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let err = |e: csv::Error| MetricsError::Serialise(e.to_string());
            w.write_record(["config", "seed", "metric", "value"]).map_err(err)?;
            for (config, r) in reports {
                let seed = r.seed.to_string();
                for (metric, value) in metric_rows(r) {
                    w.write_record([config.as_str(), seed.as_str(), metric.as_str(), value.as_str()]).map_err(err)?;
                }
            }
            w.into_inner().map_err(|e| MetricsError::Serialise(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orphan_rates() {
        assert_eq!(orphan_rate(144, 144), 0.0);
        assert!((orphan_rate(144, 143) - 1.0 / 144.0).abs() < 1e-12);
        assert_eq!(orphan_rate(0, 0), 0.0);
    }

    #[test]
    fn uninformed_against_itself_is_zero() {
        let log = vec![(0.0, 0), (10.0, 1), (700.0, 2)];
        assert_eq!(uninformed_fraction(&log, &log, 0.0, 1000.0, &[]), 0.0);
    }

    #[test]
    fn uninformed_counts_lag() {
        let reference = vec![(0.0, 0), (100.0, 1)];
        let victim = vec![(0.0, 0), (400.0, 1)];
        assert!((uninformed_fraction(&victim, &reference, 0.0, 1000.0, &[]) - 0.3).abs() < 1e-12);
        // Downtime is removed from both numerator and denominator.
        let f = uninformed_fraction(&victim, &reference, 0.0, 1000.0, &[(100.0, 200.0)]);
        assert!((f - 200.0 / 900.0).abs() < 1e-12);
    }

    #[test]
    fn p50_on_single_link() {
        let (p, partial) = p50_propagation(&[vec![0.0, 2.5]], &[0.0], 2);
        assert_eq!(p, Some(2.5));
        assert!(!partial);
        let (p, partial) = p50_propagation(&[vec![0.0, 2.5], vec![10.0, 12.5]], &[0.0, 10.0], 3);
        assert_eq!(p, Some(2.5));
        assert!(partial);
    }
}
