use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::{stream, STREAM_CHURN};

/// Gap until the next reboot of a node with the given mean lifetime; `None`
/// lifetimes never reboot.
pub fn next_reboot_gap<R: Rng>(rng: &mut R, mean: Option<f64>) -> Option<f64> {
    let mean = mean.filter(|m| m.is_finite() && *m > 0.0)?;
    Some(Exp::new(1.0 / mean).expect("positive mean").sample(rng))
}

/// Reboot times in `(0, horizon]` for every node. Node `i` draws from its own
/// stream, so adding nodes does not move anyone else's reboots.
pub fn churn_process(seed: u64, lifetimes: &[Option<f64>], horizon: f64) -> Vec<Vec<f64>> {
    lifetimes
        .iter()
        .enumerate()
        .map(|(i, mean)| {
            let mut rng = stream(seed, STREAM_CHURN + i as u64);
            let mut t = 0.0;
            let mut out = Vec::new();
            while let Some(gap) = next_reboot_gap(&mut rng, *mean) {
                t += gap;
                if t > horizon {
                    break;
                }
                out.push(t);
            }
            out
        })
        .collect()
}
