use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use proptest::prelude::*;

use kgrank_core::market::{
    load_price_csv, load_price_dir, make_phases, make_topk_labels, make_window, Market, Normalizer, PhaseGeometry,
    PriceSeries,
};
use kgrank_core::Error;

fn series_from_closes(ticker: &str, closes: &[f64]) -> PriceSeries {
    let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
    let n = closes.len();
    PriceSeries {
        asset_id: 0,
        ticker: ticker.into(),
        name: ticker.into(),
        dates: (0..n).map(|i| start + Duration::days(i as i64)).collect(),
        open: closes.iter().map(|c| c * 0.99).collect(),
        high: closes.iter().map(|c| c * 1.02).collect(),
        low: closes.iter().map(|c| c * 0.97).collect(),
        close: closes.to_vec(),
        volume: (0..n).map(|i| 1000.0 + i as f64).collect(),
    }
}

fn write_csv(path: &Path, rows: usize) {
    let start = NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
    let mut text = String::from("Date,Open,High,Low,Close,Volume\n");
    for i in 0..rows {
        let d = start + Duration::days(i as i64);
        let p = 50.0 + (i % 17) as f64;
        text.push_str(&format!("{d},{p},{},{},{p},{}\n", p + 1.0, p - 1.0, 100 + i));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn row_threshold_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    write_csv(&dir.path().join("AAA-Alpha.csv"), 2800);
    write_csv(&dir.path().join("BBB-Beta.csv"), 2799);
    let loaded = load_price_dir(dir.path(), 2800).unwrap();
    assert_eq!(loaded.series.len(), 1);
    assert_eq!(loaded.series[0].ticker, "AAA");
    assert_eq!(loaded.series[0].len(), 2800);
    assert_eq!(loaded.skipped.len(), 1);
    assert_eq!(loaded.skipped[0].1, 2799);

    let short = load_price_csv(&dir.path().join("BBB-Beta.csv"), 2800);
    assert!(matches!(short, Err(Error::TooShort { rows: 2799, min_rows: 2800, .. })));
}

#[test]
fn schema_and_price_errors() {
    let dir = tempfile::tempdir().unwrap();
    let no_close = dir.path().join("X.csv");
    fs::write(&no_close, "Date,Open,High,Low,Volume\n2020-01-02,1,2,0.5,10\n").unwrap();
    assert!(matches!(load_price_csv(&no_close, 1), Err(Error::Schema { .. })));

    let negative = dir.path().join("Y.csv");
    fs::write(&negative, "Date,Open,High,Low,Close,Volume\n2020-01-02,1,2,0.5,-1,10\n").unwrap();
    assert!(matches!(load_price_csv(&negative, 1), Err(Error::Data(_))));

    let unsorted = dir.path().join("Z.csv");
    fs::write(
        &unsorted,
        "Date,Open,High,Low,Close,Volume\n2020-01-03,1,2,0.5,3,10\n2020-01-02,1,2,0.5,2,10\n",
    )
    .unwrap();
    let s = load_price_csv(&unsorted, 1).unwrap();
    assert_eq!(s.close, vec![2.0, 3.0]);
}

#[test]
fn geometric_window_closed_form() {
    let closes: Vec<f64> = (0..40).map(|t| 100.0 * 1.01f64.powi(t)).collect();
    let s = series_from_closes("G", &closes);
    let t = 10;
    let w = make_window(&s, t, 4, &[5], Normalizer::PreviousDay).unwrap();
    let label = w.label(5).unwrap();
    assert!((label.ret - (1.01f64.powi(5) - 1.0)).abs() < 1e-12);
    assert!((label.ret - 0.05101).abs() < 1e-5);
    assert!(label.up);
    for r in 0..4 {
        let expected = 1.01f64.powi(r as i32 + 1);
        assert!((w.features[(r, 3)] - expected).abs() < 1e-12, "row {r}");
    }

    let first = make_window(&s, t, 4, &[5], Normalizer::FirstInWindow).unwrap();
    assert!((first.features[(0, 3)] - 1.0).abs() < 1e-12);
}

#[test]
fn constant_and_doubling_windows() {
    let mut s = series_from_closes("C", &[5.0; 12]);
    s.volume = vec![7.0; 12];
    let w = make_window(&s, 6, 3, &[1, 5], Normalizer::PreviousDay).unwrap();
    assert!(w.features.as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    assert!(w.labels.iter().all(|l| l.ret == 0.0 && l.up));

    let mut closes = vec![10.0; 8];
    closes[6] = 20.0;
    let s = series_from_closes("D", &closes);
    let w = make_window(&s, 5, 3, &[1], Normalizer::PreviousDay).unwrap();
    assert_eq!(w.label(1).unwrap().ret, 1.0);
    assert!(w.label(1).unwrap().up);
}

#[test]
fn window_range_errors() {
    let s = series_from_closes("R", &[1.0; 10]);
    assert!(matches!(make_window(&s, 2, 3, &[1], Normalizer::PreviousDay), Err(Error::Range(_))));
    assert!(matches!(make_window(&s, 8, 3, &[2], Normalizer::PreviousDay), Err(Error::Range(_))));
    assert!(make_window(&s, 3, 3, &[6], Normalizer::PreviousDay).is_ok());
}

#[test]
fn missing_day_drops_asset_from_cross_section() {
    let full = series_from_closes("A", &[10.0; 30]);
    let mut gap = series_from_closes("B", &[20.0; 30]);
    for v in [&mut gap.open, &mut gap.high, &mut gap.low, &mut gap.close, &mut gap.volume] {
        v.remove(12);
    }
    gap.dates.remove(12);
    let m = Market::new(vec![full, gap]).unwrap();
    assert_eq!(m.num_days(), 30);
    assert_eq!(m.cross_section(15, 5, &[1], Normalizer::PreviousDay).assets(), vec![0]);
    assert_eq!(m.cross_section(25, 5, &[1], Normalizer::PreviousDay).assets(), vec![0, 1]);
    // label day missing
    assert_eq!(m.cross_section(11, 5, &[1], Normalizer::PreviousDay).assets(), vec![0]);
    assert_eq!(m.cross_section(5, 5, &[1], Normalizer::PreviousDay).assets(), vec![0, 1]);
}

#[test]
fn phase_geometry_examples() {
    let g = PhaseGeometry::default();
    let p = make_phases(2800, 24, &g).unwrap();
    assert_eq!(p.len(), 24);
    assert_eq!((p[0].train.clone(), p[0].val.clone(), p[0].test.clone()), (0..250, 250..300, 300..400));
    assert_eq!(p[23].test.end, 2700);
    assert!(p.iter().skip(2).all(|ph| ph.train.len() == 450));
    for w in p.windows(2) {
        assert_eq!(w[0].test.end, w[1].test.start);
    }

    let one = make_phases(400, 1, &g).unwrap();
    assert_eq!((one[0].train.len(), one[0].val.len(), one[0].test.len()), (250, 50, 100));
    match make_phases(399, 1, &g) {
        Err(Error::Config(m)) => assert!(m.contains("400"), "{m}"),
        other => panic!("expected configuration error, got {other:?}"),
    }
}

#[test]
fn topk_examples() {
    assert_eq!(make_topk_labels(&[3.0, 1.0, 2.0], 1), vec![true, false, false]);
    assert_eq!(make_topk_labels(&[0.5; 4], 2), vec![true, true, false, false]);
}

proptest! {
    #[test]
    fn topk_matches_sort_oracle(returns in prop::collection::vec(-1.0f64..1.0, 20), k in 0usize..=20) {
        let labels = make_topk_labels(&returns, k);
        prop_assert_eq!(labels.iter().filter(|&&b| b).count(), k);
        let mut sorted = returns.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if k > 0 {
            let cutoff = sorted[k - 1];
            for (i, &r) in returns.iter().enumerate() {
                if r > cutoff { prop_assert!(labels[i]); }
                if r < cutoff { prop_assert!(!labels[i]); }
            }
        }
    }

    #[test]
    fn window_is_leak_free(
        closes in prop::collection::vec(1.0f64..200.0, 40),
        junk in prop::collection::vec(1.0f64..200.0, 40),
        t in 8usize..30,
    ) {
        let base = series_from_closes("L", &closes);
        let w = make_window(&base, t, 6, &[1, 5], Normalizer::PreviousDay).unwrap();
        let mut spliced = closes.clone();
        for d in 0..40 {
            let feature_day = d + 6 >= t && d <= t;
            let label_day = d == t + 1 || d == t + 5;
            if !feature_day && !label_day {
                spliced[d] = junk[d];
            }
        }
        let w2 = make_window(&series_from_closes("L", &spliced), t, 6, &[1, 5], Normalizer::PreviousDay).unwrap();
        prop_assert_eq!(w.features, w2.features);
        prop_assert_eq!(w.labels, w2.labels);
    }

    #[test]
    fn direction_agrees_with_return_sign(closes in prop::collection::vec(1.0f64..200.0, 30), t in 5usize..20) {
        let s = series_from_closes("S", &closes);
        let w = make_window(&s, t, 5, &[1, 5, 9], Normalizer::PreviousDay).unwrap();
        for l in &w.labels {
            prop_assert_eq!(l.up, l.ret >= 0.0);
        }
    }

    #[test]
    fn test_ranges_tile_when_stride_is_test_length(n in 1usize..30, extra in 0usize..300) {
        let g = PhaseGeometry::default();
        let p = make_phases(g.min_total_days(n) + extra, n, &g).unwrap();
        prop_assert_eq!(p.len(), n);
        prop_assert_eq!(p[0].test.start, 300);
        prop_assert_eq!(p[n - 1].test.end, 300 + 100 * n);
        for ph in &p {
            prop_assert!(ph.train.end == ph.val.start && ph.val.end == ph.test.start);
            prop_assert_eq!(ph.val.len(), 50);
            prop_assert!(ph.train.len() >= 250 && ph.train.len() <= 450);
        }
    }
}
