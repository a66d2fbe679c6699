use std::fmt::Write;

use super::{MetricsReport, PortfolioPoint};

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.prec$}"),
        _ => "-".to_string(),
    }
}

fn csv_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => String::new(),
    }
}

/// Aggregate table, one row per (Δ, k): mean ± std across phases.
pub fn text_table(report: &MetricsReport) -> String {
    let cols = ["irr", "airr", "sr", "ndcg", "acc", "irr_best", "irr_worst", "cum_irr"];
    let mut out = String::new();
    let _ = write!(out, "{:>5} {:>3}", "delta", "k");
    for c in cols {
        let _ = write!(out, " {c:>20}");
    }
    out.push('\n');
    let mut keys: Vec<(usize, usize)> = report.aggregate.iter().map(|c| (c.delta, c.k)).collect();
    keys.dedup();
    for (delta, k) in keys {
        let _ = write!(out, "{delta:>5} {k:>3}");
        for c in cols {
            let cell = report.cell(delta, k, c);
            let text = match cell {
                Some(cell) => format!("{} ± {}", fmt_opt(cell.mean, 3), fmt_opt(cell.std, 3)),
                None => "-".into(),
            };
            let _ = write!(out, " {text:>20}");
        }
        out.push('\n');
    }
    let phases: std::collections::BTreeSet<usize> = report.phases.iter().map(|p| p.phase).collect();
    let _ = writeln!(out, "phases evaluated: {}", phases.len());
    if !report.absent_phases.is_empty() {
        let _ = writeln!(out, "phases absent: {:?}", report.absent_phases);
    }
    out
}

/// Long-format rows `phase,delta,k,metric,value`; aggregate rows use the
/// phase labels `mean` and `std`. Missing values are empty.
pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut out = String::from("phase,delta,k,metric,value\n");
    for p in &report.phases {
        for (name, v) in p.cells() {
            let _ = writeln!(out, "{},{},{},{},{}", p.phase, p.delta, p.k, name, csv_opt(v));
        }
    }
    for c in &report.aggregate {
        let _ = writeln!(out, "mean,{},{},{},{}", c.delta, c.k, c.metric, csv_opt(c.mean));
        let _ = writeln!(out, "std,{},{},{},{}", c.delta, c.k, c.metric, csv_opt(c.std));
    }
    out
}

pub fn portfolio_csv(points: &[PortfolioPoint]) -> String {
    let mut out = String::from("phase,delta,k,execution,day,date,value\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.phase,
            p.delta,
            p.k,
            p.execution.name(),
            p.day,
            p.date,
            p.value
        );
    }
    out
}
