use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{rank_desc, Market};

/// Which prices a trade executes at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    /// Buy at close `T`, sell at close `T + Δ`.
    Close,
    /// Buy at the low of `T`, sell at the high of `T + Δ`.
    Best,
    /// Buy at the high of `T`, sell at the low of `T + Δ`.
    Worst,
}

impl Execution {
    pub const ALL: [Execution; 3] = [Execution::Close, Execution::Best, Execution::Worst];

    pub fn name(self) -> &'static str {
        match self {
            Execution::Close => "close",
            Execution::Best => "best",
            Execution::Worst => "worst",
        }
    }
}

/// Model scores for one day; `None` where an asset has no prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayScores {
    pub day: usize,
    pub scores: Vec<Option<f64>>,
}

impl DayScores {
    /// Assets with a score, best first (ties to the smaller index).
    pub fn ranking(&self) -> Vec<usize> {
        let present: Vec<usize> = (0..self.scores.len()).filter(|&a| self.scores[a].is_some()).collect();
        let vals: Vec<f64> = present.iter().map(|&a| self.scores[a].unwrap_or(f64::NAN)).collect();
        rank_desc(&vals).into_iter().map(|i| present[i]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalOutcome {
    pub start_day: usize,
    pub end_day: usize,
    pub picks: Vec<usize>,
    /// Picks without prices at either end, dropped from the portfolio.
    pub skipped: Vec<usize>,
    /// Fractional portfolio return over the interval.
    pub ret: f64,
}

/// Rebalancing days: the first prediction day, then every `delta` days,
/// each holding ending inside the calendar.
pub fn interval_starts(market: &Market, predictions: &[DayScores], delta: usize) -> Vec<usize> {
    let mut days: Vec<usize> = predictions.iter().map(|p| p.day).collect();
    days.sort_unstable();
    days.dedup();
    let mut out = Vec::new();
    let mut next = match days.first() {
        Some(&d) => d,
        None => return out,
    };
    for d in days {
        if d < next {
            continue;
        }
        if d + delta >= market.num_days() {
            break;
        }
        out.push(d);
        next = d + delta;
    }
    out
}

fn trade_prices(market: &Market, asset: usize, start: usize, end: usize, exec: Execution) -> Option<(f64, f64)> {
    let s = &market.series()[asset];
    let a = market.row(asset, start)?;
    let b = market.row(asset, end)?;
    let (buy, sell) = match exec {
        Execution::Close => (s.close[a], s.close[b]),
        Execution::Best => (s.low[a], s.high[b]),
        Execution::Worst => (s.high[a], s.low[b]),
    };
    (buy > 0.0 && sell.is_finite()).then_some((buy, sell))
}

/// Equal-weight top-`k` buy-and-hold over consecutive `delta`-day holds.
pub fn simulate(
    market: &Market,
    predictions: &[DayScores],
    delta: usize,
    k: usize,
    exec: Execution,
) -> Result<Vec<IntervalOutcome>> {
    if delta == 0 || k == 0 {
        return Err(Error::Config("holding period and k must be positive".into()));
    }
    let mut out = Vec::new();
    for start in interval_starts(market, predictions, delta) {
        let pred = predictions
            .iter()
            .find(|p| p.day == start)
            .expect("interval starts come from prediction days");
        let end = start + delta;
        let picks: Vec<usize> = pred.ranking().into_iter().take(k).collect();
        let mut rets = Vec::new();
        let mut skipped = Vec::new();
        for &a in &picks {
            match trade_prices(market, a, start, end, exec) {
                Some((buy, sell)) => rets.push(sell / buy - 1.0),
                None => skipped.push(a),
            }
        }
        if !skipped.is_empty() {
            warn!(
                "day {start}: no {} price for assets {skipped:?}, weight spread over the rest",
                exec.name()
            );
        }
        let ret = if rets.is_empty() {
            0.0
        } else {
            rets.iter().sum::<f64>() / rets.len() as f64
        };
        out.push(IntervalOutcome {
            start_day: start,
            end_day: end,
            picks,
            skipped,
            ret,
        });
    }
    Ok(out)
}

/// Compounded growth of 1 unit through the intervals.
pub fn compound(returns: impl IntoIterator<Item = f64>) -> f64 {
    returns.into_iter().fold(1.0, |v, r| v * (1.0 + r))
}
