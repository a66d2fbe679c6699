use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};

use kgrank_core::synth::{
    business_days, generate, planted_event_graph, write_dataset, PlantedRule, SynthConfig, DECLARES_DIVIDEND,
};
use kgrank_core::Error;

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        assets: 6,
        total_days: 420,
        ..SynthConfig::default()
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Pairs of (event on day t, log-return on day t + 1) over every asset.
fn event_response(cfg: &SynthConfig) -> (Vec<f64>, Vec<f64>) {
    let data = generate(cfg).unwrap();
    let mut hit = vec![vec![0.0; cfg.total_days]; cfg.assets];
    for e in &data.events {
        hit[e.asset][e.day] = 1.0;
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (a, s) in data.series.iter().enumerate() {
        for t in 1..cfg.total_days - 1 {
            x.push(hit[a][t]);
            y.push((s.close[t + 1] / s.close[t]).ln());
        }
    }
    (x, y)
}

#[test]
fn same_seed_writes_identical_files() {
    let cfg = small(7);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_dataset(&generate(&cfg).unwrap(), a.path()).unwrap();
    write_dataset(&generate(&cfg).unwrap(), b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), 6 + 3);
    assert_eq!(fa, fb);

    let c = tempfile::tempdir().unwrap();
    write_dataset(&generate(&small(8)).unwrap(), c.path()).unwrap();
    assert_ne!(files(c.path()), fa);
}

#[test]
fn noiseless_event_shifts_next_close_exactly() {
    let cfg = SynthConfig {
        noise: 0.0,
        news_per_day: 0.0,
        yoy_rate: 0.0,
        rules: vec![PlantedRule {
            events_per_day: 0.3,
            ..PlantedRule::dividend()
        }],
        ..small(3)
    };
    let data = generate(&cfg).unwrap();
    assert!(!data.events.is_empty());
    let mut expected = vec![vec![0.0; cfg.total_days]; cfg.assets];
    for e in &data.events {
        if e.day + 1 < cfg.total_days {
            expected[e.asset][e.day + 1] += 0.05;
        }
    }
    for (a, s) in data.series.iter().enumerate() {
        for t in 1..cfg.total_days {
            let r = (s.close[t] / s.close[t - 1]).ln();
            assert!((r - expected[a][t]).abs() < 1e-12, "asset {a} day {t}: {r}");
        }
    }
    let dividend = data.kg.relation_type_id(DECLARES_DIVIDEND).unwrap();
    let quads = data
        .kg
        .relations()
        .iter()
        .filter(|r| r.relation_type == dividend)
        .filter(|r| r.valid_to.map(|to| to - r.valid_from) == Some(chrono::Duration::days(1)))
        .count();
    assert_eq!(quads, data.events.len());
}

#[test]
fn zero_effect_leaves_events_uncorrelated() {
    let base = SynthConfig {
        assets: 10,
        total_days: 600,
        ..small(11)
    };
    let null = SynthConfig {
        rules: vec![PlantedRule {
            effect: 0.0,
            ..PlantedRule::dividend()
        }],
        ..base.clone()
    };
    let (x, y) = event_response(&null);
    assert!(correlation(&x, &y).abs() < 0.05, "{}", correlation(&x, &y));
    let (x, y) = event_response(&base);
    assert!(correlation(&x, &y) > 0.5, "{}", correlation(&x, &y));
}

#[test]
fn calendar_skips_weekends() {
    let start = NaiveDate::from_ymd_opt(2024, 1, 5).unwrap();
    let d = business_days(start, 3);
    assert_eq!(d[1], NaiveDate::from_ymd_opt(2024, 1, 8).unwrap());
    assert!(business_days(start, 50).iter().all(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)));
}

#[test]
fn prices_are_consistent_bars() {
    let data = generate(&small(5)).unwrap();
    assert_eq!(data.asset_entities.len(), 6);
    for s in &data.series {
        for t in 0..s.len() {
            assert!(s.low[t] <= s.open[t].min(s.close[t]) && s.high[t] >= s.open[t].max(s.close[t]));
            assert!(s.low[t] > 0.0 && s.volume[t] > 0.0);
        }
    }
}

#[test]
fn invalid_configs_rejected() {
    for cfg in [
        SynthConfig { total_days: 399, ..small(0) },
        SynthConfig { assets: 1, ..small(0) },
        SynthConfig { sector_weight: 1.5, ..small(0) },
        SynthConfig {
            rules: vec![PlantedRule { lag: 0, ..PlantedRule::dividend() }],
            ..small(0)
        },
    ] {
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }
    assert!(matches!(planted_event_graph(0, 10, 2, 2, 3, 5), Err(Error::Config(_))));
}

#[test]
fn event_graph_respects_group_offsets() {
    let g = planted_event_graph(1, 30, 10, 3, 6, 15).unwrap();
    assert_eq!(g.events.len(), 6 * 15);
    for e in &g.events {
        assert_eq!(e.tail as usize % 10, e.head as usize % 10 + e.relation as usize + 1);
    }
    assert_eq!(g.kg.expand_monthly().len(), g.events.len());
}
