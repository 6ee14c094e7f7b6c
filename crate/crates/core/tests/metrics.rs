mod support;

use btcrs_core::engine::run;
use btcrs_core::metrics::{emit, median, orphan_rate, uninformed_fraction, Format};
use proptest::prelude::*;
use support::*;

/// Integer-timed step log: strictly increasing times in `0..100`.
fn log_strategy() -> impl Strategy<Value = Vec<(f64, u32)>> {
    proptest::collection::btree_map(0u32..100, 0u32..5, 0..12)
        .prop_map(|m| m.into_iter().map(|(t, h)| (t as f64, h)).collect())
}

fn height(log: &[(f64, u32)], t: f64) -> u32 {
    log.iter().rev().find(|(at, _)| *at <= t).map_or(0, |(_, h)| *h)
}

proptest! {
    #[test]
    fn uninformed_fraction_matches_unit_sampling(
        victim in log_strategy(),
        reference in log_strategy(),
        start in 0u32..50,
        len in 1u32..50,
        down in proptest::option::of((0u32..100, 1u32..20)),
    ) {
        let end = start + len;
        let downtime: Vec<(f64, f64)> = down.iter().map(|(a, l)| (*a as f64, (*a + *l) as f64)).collect();
        let got = uninformed_fraction(&victim, &reference, start as f64, end as f64, &downtime);

        // Every change point is an integer, so sampling unit midpoints is exact.
        let (mut behind, mut up) = (0u32, 0u32);
        for k in start..end {
            let mid = k as f64 + 0.5;
            if downtime.iter().any(|(a, b)| mid >= *a && mid < *b) {
                continue;
            }
            up += 1;
            behind += (height(&victim, mid) < height(&reference, mid)) as u32;
        }
        let want = if up == 0 { 0.0 } else { behind as f64 / up as f64 };
        prop_assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
    }

    #[test]
    fn orphan_rate_is_a_fraction(mined in 0usize..1000, on_chain in 0usize..1000) {
        let r = orphan_rate(mined, on_chain);
        prop_assert!((0.0..=1.0).contains(&r));
        if on_chain >= mined {
            prop_assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn median_splits_the_sample(mut xs in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
        let m = median(&mut xs).unwrap();
        let below = xs.iter().filter(|x| **x < m).count();
        let above = xs.iter().filter(|x| **x > m).count();
        prop_assert!(below <= xs.len() / 2 && above <= xs.len() / 2);
    }
}

#[test]
fn reports_serialise_to_json_and_csv() {
    let s = scenario("paperlike.scn");
    let mut cfg = s.config.clone();
    cfg.params.run_blocks = 10;
    let out = run(&s.topology, &cfg).unwrap();
    let reports = vec![("baseline".to_string(), out.report.clone())];

    let json: serde_json::Value = serde_json::from_slice(&emit(&reports, Format::Json).unwrap()).unwrap();
    assert_eq!(json[0]["config"], "baseline");
    assert_eq!(json[0]["orphan_rate"].as_f64().unwrap(), out.report.orphan_rate);
    assert_eq!(json[0]["seed"], 1);

    let csv_bytes = emit(&reports, Format::Csv).unwrap();
    let mut rd = csv::Reader::from_reader(csv_bytes.as_slice());
    assert_eq!(rd.headers().unwrap(), vec!["config", "seed", "metric", "value"]);
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    let orphan = rows.iter().find(|r| &r[2] == "orphan_rate").unwrap();
    assert_eq!(orphan[3].parse::<f64>().unwrap(), out.report.orphan_rate);
    assert!(rows.iter().all(|r| &r[0] == "baseline" && &r[1] == "1"));

    assert!("xml".parse::<Format>().is_err());
    assert_eq!("CSV".parse::<Format>().unwrap(), Format::Csv);
}
