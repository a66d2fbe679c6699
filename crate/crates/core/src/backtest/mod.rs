//! Portfolio simulation and evaluation metrics.

mod metrics;
mod report;
mod simulate;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{make_topk_labels, Market};

pub use metrics::{
    acc_at_k, airr, irr, mean_std, min_max, ndcg_at_k, relevance, sharpe, Relevance, TRADING_DAYS_PER_YEAR,
};
pub use report::{metrics_csv, portfolio_csv, text_table};
pub use simulate::{compound, interval_starts, simulate, DayScores, Execution, IntervalOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    pub deltas: Vec<usize>,
    pub ks: Vec<usize>,
    pub relevance: Relevance,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            deltas: vec![1, 5, 20],
            ks: vec![1, 5],
            relevance: Relevance::Binary,
        }
    }
}

/// Metrics of one phase at one (Δ, k). Returns are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub phase: usize,
    pub delta: usize,
    pub k: usize,
    pub intervals: usize,
    /// Mean per-interval return.
    pub irr: f64,
    /// Compounded return over the test period.
    pub cum_irr: f64,
    /// Annualized from the mean per-interval return.
    pub airr: Option<f64>,
    pub sharpe: Option<f64>,
    pub ndcg: f64,
    pub acc: f64,
    pub irr_best: f64,
    pub irr_worst: f64,
    pub cum_irr_best: f64,
    pub cum_irr_worst: f64,
}

impl PhaseMetrics {
    pub const NAMES: [&'static str; 11] = [
        "irr",
        "cum_irr",
        "airr",
        "sr",
        "ndcg",
        "acc",
        "irr_best",
        "irr_worst",
        "cum_irr_best",
        "cum_irr_worst",
        "intervals",
    ];

    pub fn cells(&self) -> [(&'static str, Option<f64>); 11] {
        [
            ("irr", Some(self.irr)),
            ("cum_irr", Some(self.cum_irr)),
            ("airr", self.airr),
            ("sr", self.sharpe),
            ("ndcg", Some(self.ndcg)),
            ("acc", Some(self.acc)),
            ("irr_best", Some(self.irr_best)),
            ("irr_worst", Some(self.irr_worst)),
            ("cum_irr_best", Some(self.cum_irr_best)),
            ("cum_irr_worst", Some(self.cum_irr_worst)),
            ("intervals", Some(self.intervals as f64)),
        ]
    }
}

/// Portfolio value after each holding interval, starting from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortfolioPoint {
    pub phase: usize,
    pub delta: usize,
    pub k: usize,
    pub execution: Execution,
    pub day: usize,
    pub date: NaiveDate,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub metrics: Vec<PhaseMetrics>,
    pub series: Vec<PortfolioPoint>,
}

/// Converts an annual risk-free rate (fraction) to a per-interval one.
pub fn risk_free_per_interval(annual: f64, delta: usize) -> f64 {
    (1.0 + annual).powf(delta as f64 / TRADING_DAYS_PER_YEAR) - 1.0
}

/// Close-to-close return of every asset with prices at both ends.
fn realized_returns(market: &Market, start: usize, end: usize) -> Vec<Option<f64>> {
    (0..market.num_assets())
        .map(|a| Some(market.close(a, end)? / market.close(a, start)? - 1.0))
        .collect()
}

/// Ranking quality of one day's scores among assets with both a score and
/// a realized return.
pub fn ranking_metrics(scores: &DayScores, realized: &[Option<f64>], k: usize, mode: Relevance) -> Option<(f64, f64)> {
    let assets: Vec<usize> = (0..scores.scores.len())
        .filter(|&a| scores.scores[a].is_some() && realized.get(a).copied().flatten().is_some())
        .collect();
    if assets.is_empty() {
        return None;
    }
    let k = k.min(assets.len());
    let preds: Vec<f64> = assets.iter().map(|&a| scores.scores[a].unwrap_or(f64::NAN)).collect();
    let rets: Vec<f64> = assets.iter().map(|&a| realized[a].unwrap_or(f64::NAN)).collect();
    let order = crate::market::rank_desc(&preds);
    let rel = relevance(&rets, k, mode);
    let ndcg = ndcg_at_k(&order, &rel, k);
    let truth: Vec<usize> = make_topk_labels(&rets, k)
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    let acc = acc_at_k(&order[..k], &truth);
    Some((ndcg, acc))
}

/// Simulates every (Δ, k, execution) for one phase's test predictions.
pub fn evaluate_phase(
    market: &Market,
    phase: usize,
    predictions: &[DayScores],
    cfg: &BacktestConfig,
    risk_free_annual: f64,
) -> Result<PhaseResult> {
    let mut out = PhaseResult::default();
    for &delta in &cfg.deltas {
        for &k in &cfg.ks {
            let mut by_exec = BTreeMap::new();
            for exec in Execution::ALL {
                let intervals = simulate(market, predictions, delta, k, exec)?;
                let mut value = 1.0;
                for iv in &intervals {
                    value *= 1.0 + iv.ret;
                    out.series.push(PortfolioPoint {
                        phase,
                        delta,
                        k,
                        execution: exec,
                        day: iv.end_day,
                        date: market.calendar()[iv.end_day],
                        value,
                    });
                }
                by_exec.insert(exec, intervals);
            }
            let close = &by_exec[&Execution::Close];
            let mean_pct = |ivs: &[IntervalOutcome]| {
                if ivs.is_empty() {
                    0.0
                } else {
                    ivs.iter().map(|i| i.ret).sum::<f64>() / ivs.len() as f64 * 100.0
                }
            };
            let cum_pct = |ivs: &[IntervalOutcome]| (compound(ivs.iter().map(|i| i.ret)) - 1.0) * 100.0;
            let irr = mean_pct(close);
            let rets: Vec<f64> = close.iter().map(|i| i.ret).collect();

            let (mut ndcg_sum, mut acc_sum, mut n_rank) = (0.0, 0.0, 0usize);
            for iv in close {
                let pred = predictions
                    .iter()
                    .find(|p| p.day == iv.start_day)
                    .expect("interval starts come from prediction days");
                let realized = realized_returns(market, iv.start_day, iv.end_day);
                if let Some((n, a)) = ranking_metrics(pred, &realized, k, cfg.relevance) {
                    ndcg_sum += n;
                    acc_sum += a;
                    n_rank += 1;
                }
            }
            let avg = |s: f64| if n_rank == 0 { 0.0 } else { s / n_rank as f64 };
            out.metrics.push(PhaseMetrics {
                phase,
                delta,
                k,
                intervals: close.len(),
                irr,
                cum_irr: cum_pct(close),
                airr: airr(irr, delta).ok(),
                sharpe: sharpe(&rets, risk_free_per_interval(risk_free_annual, delta)),
                ndcg: avg(ndcg_sum),
                acc: avg(acc_sum),
                irr_best: mean_pct(&by_exec[&Execution::Best]),
                irr_worst: mean_pct(&by_exec[&Execution::Worst]),
                cum_irr_best: cum_pct(&by_exec[&Execution::Best]),
                cum_irr_worst: cum_pct(&by_exec[&Execution::Worst]),
            });
        }
    }
    Ok(out)
}

/// Mean and sample standard deviation of one metric across phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub delta: usize,
    pub k: usize,
    pub metric: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Phases that had a value for this metric.
    pub phases: usize,
}

pub fn aggregate(phases: &[PhaseMetrics]) -> Result<Vec<AggregateCell>> {
    if phases.is_empty() {
        return Err(Error::Data("no phase results to aggregate".into()));
    }
    let mut groups: BTreeMap<(usize, usize), Vec<&PhaseMetrics>> = BTreeMap::new();
    for p in phases {
        groups.entry((p.delta, p.k)).or_default().push(p);
    }
    let mut out = Vec::new();
    for ((delta, k), rows) in groups {
        for (i, name) in PhaseMetrics::NAMES.iter().enumerate() {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r.cells()[i].1).collect();
            let (mean, std) = if vals.is_empty() { (None, None) } else {
                let (m, s) = mean_std(&vals);
                (Some(m), s)
            };
            out.push(AggregateCell {
                delta,
                k,
                metric: name.to_string(),
                mean,
                std,
                phases: vals.len(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub phases: Vec<PhaseMetrics>,
    pub aggregate: Vec<AggregateCell>,
    /// Phases without predictions (e.g. a missing checkpoint).
    pub absent_phases: Vec<usize>,
}

impl MetricsReport {
    pub fn new(mut phases: Vec<PhaseMetrics>, absent_phases: Vec<usize>) -> Result<Self> {
        phases.sort_by_key(|p| (p.phase, p.delta, p.k));
        let aggregate = aggregate(&phases)?;
        Ok(Self {
            phases,
            aggregate,
            absent_phases,
        })
    }

    pub fn cell(&self, delta: usize, k: usize, metric: &str) -> Option<&AggregateCell> {
        self.aggregate
            .iter()
            .find(|c| c.delta == delta && c.k == k && c.metric == metric)
    }
}
