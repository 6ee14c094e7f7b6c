use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::adversary::{DEFAULT_CONVERGENCE_DELAY, DEFAULT_RESTORE_MARGIN, DEFAULT_THRESHOLD};

/// Seconds per AS hop, tuned so a healthy run of the shipped 20-node
/// scenario has a median block propagation time of about 7 s.
pub const CALIBRATED_PER_HOP_DELAY: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("unknown parameter '{0}'")]
    Unknown(String),
    #[error("bad value for '{key}': {reason}")]
    BadValue { key: String, reason: String },
}

/// One class of node lifetimes: `share` of the nodes reboot after
/// exponentially distributed gaps with the given mean (never, when `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeClass {
    pub share: f64,
    pub mean_secs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LifetimeTable(pub Vec<LifetimeClass>);

impl LifetimeTable {
    /// A small set of short-lived nodes that restart roughly hourly and a
    /// long-lived majority; shaped after observed node uptimes.
    pub fn empirical() -> Self {
        LifetimeTable(vec![
            LifetimeClass { share: 0.065, mean_secs: Some(3600.0) },
            LifetimeClass { share: 0.935, mean_secs: Some(35.0 * 3600.0) },
        ])
    }

    pub fn never() -> Self {
        LifetimeTable(vec![LifetimeClass { share: 1.0, mean_secs: None }])
    }

    /// Lifetime means for `n` nodes: class sizes follow the shares (largest
    /// remainder) and `order` says which node gets which slot.
    pub fn assign(&self, order: &[usize]) -> Vec<Option<f64>> {
        let n = order.len();
        let total: f64 = self.0.iter().map(|c| c.share).sum();
        let mut counts: Vec<usize> = Vec::new();
        let mut rems: Vec<(f64, usize)> = Vec::new();
        for (i, c) in self.0.iter().enumerate() {
            let exact = if total > 0.0 { c.share / total * n as f64 } else { 0.0 };
            counts.push(exact.floor() as usize);
            rems.push((exact - exact.floor(), i));
        }
        // Flooring loses less than one slot per class.
        let left = n.saturating_sub(counts.iter().sum());
        rems.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, i) in rems.iter().take(left) {
            counts[*i] += 1;
        }
        let mut out = vec![None; n];
        let mut slot = 0;
        for (i, c) in counts.iter().enumerate() {
            for _ in 0..*c {
                if slot < n {
                    out[order[slot]] = self.0[i].mean_secs;
                    slot += 1;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub block_interval_mean: f64,
    pub per_hop_delay: f64,
    /// Floor added to every public link.
    pub base_delay: f64,
    /// Transaction GETDATAs per second on each connection direction.
    pub tx_getdata_rate: f64,
    pub run_blocks: u32,
    pub seed: u64,
    pub drain_time: f64,
    pub churn: bool,
    pub lifetimes: LifetimeTable,
    pub threshold: f64,
    pub restore_margin: f64,
    pub convergence_delay: f64,
    /// Record every protocol event (tests, debugging).
    pub trace: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            block_interval_mean: 600.0,
            per_hop_delay: CALIBRATED_PER_HOP_DELAY,
            base_delay: 0.05,
            tx_getdata_rate: 0.1,
            run_blocks: 144,
            seed: 1,
            drain_time: 7200.0,
            churn: false,
            lifetimes: LifetimeTable::empirical(),
            threshold: DEFAULT_THRESHOLD,
            restore_margin: DEFAULT_RESTORE_MARGIN,
            convergence_delay: DEFAULT_CONVERGENCE_DELAY,
            trace: false,
        }
    }
}

impl SimParams {
    /// Applies a `key=value` override. Values are read as JSON, falling back
    /// to a plain string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ParamError> {
        let mut doc = serde_json::to_value(&*self).expect("params serialize");
        let obj = doc.as_object_mut().expect("object");
        if !obj.contains_key(key) {
            return Err(ParamError::Unknown(key.to_string()));
        }
        let parsed = serde_json::from_str::<Value>(value).unwrap_or_else(|_| Value::String(value.to_string()));
        obj.insert(key.to_string(), parsed);
        let next: SimParams = serde_json::from_value(doc)
            .map_err(|e| ParamError::BadValue { key: key.to_string(), reason: e.to_string() })?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let positive = [
            ("block_interval_mean", self.block_interval_mean),
            ("per_hop_delay", self.per_hop_delay),
            ("base_delay", self.base_delay),
            ("drain_time", self.drain_time),
            ("threshold", self.threshold),
        ];
        for (k, v) in positive {
            if !(v.is_finite() && v >= 0.0) || (k == "block_interval_mean" && v == 0.0) {
                return Err(ParamError::BadValue { key: k.into(), reason: format!("{v} is not positive") });
            }
        }
        for (k, v) in [("tx_getdata_rate", self.tx_getdata_rate), ("convergence_delay", self.convergence_delay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ParamError::BadValue { key: k.into(), reason: format!("{v} is negative") });
            }
        }
        if !(self.restore_margin > 0.0 && self.restore_margin < crate::protocol::BLOCK_TIMEOUT) {
            return Err(ParamError::BadValue {
                key: "restore_margin".into(),
                reason: "must lie strictly between 0 and 1200".into(),
            });
        }
        if self.run_blocks == 0 {
            return Err(ParamError::BadValue { key: "run_blocks".into(), reason: "must be at least 1".into() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides() {
        let mut p = SimParams::default();
        p.set("per_hop_delay", "2").unwrap();
        assert_eq!(p.per_hop_delay, 2.0);
        p.set("churn", "true").unwrap();
        assert!(p.churn);
        assert_eq!(p.set("nope", "1"), Err(ParamError::Unknown("nope".into())));
        assert!(p.set("run_blocks", "-3").is_err());
        assert!(p.set("restore_margin", "1300").is_err());
    }

    #[test]
    fn lifetime_assignment_follows_shares() {
        let order: Vec<usize> = (0..1000).collect();
        let got = LifetimeTable::empirical().assign(&order);
        assert_eq!(got.iter().filter(|m| **m == Some(3600.0)).count(), 65);
        assert_eq!(got.iter().filter(|m| **m == Some(126000.0)).count(), 935);
    }
}
