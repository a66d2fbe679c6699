use serde::{Deserialize, Serialize};

use super::series::PriceSeries;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Number of per-day input features (open, high, low, close, volume).
pub const N_FEATURES: usize = 5;

/// Which day's values divide the window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    /// Day `T - W`, the last day before the window.
    #[default]
    PreviousDay,
    /// Day `T - W + 1`, the first day of the window.
    FirstInWindow,
}

/// Future outcome of holding an asset from `T` to `T + delta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonLabel {
    pub delta: usize,
    /// `(close[T+delta] - close[T]) / close[T]`.
    pub ret: f64,
    /// `ret >= 0`.
    pub up: bool,
    pub close_t: f64,
    pub close_end: f64,
    pub low_t: f64,
    pub high_t: f64,
    pub low_end: f64,
    pub high_end: f64,
}

impl HorizonLabel {
    fn compute(s: &PriceSeries, t: usize, delta: usize) -> Self {
        let e = t + delta;
        let ret = (s.close[e] - s.close[t]) / s.close[t];
        Self {
            delta,
            ret,
            up: s.close[e] >= s.close[t],
            close_t: s.close[t],
            close_end: s.close[e],
            low_t: s.low[t],
            high_t: s.high[t],
            low_end: s.low[e],
            high_end: s.high[e],
        }
    }
}

/// Normalized `W x 5` input window ending at day `T` plus labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceWindow {
    pub asset_id: usize,
    /// Anchor day index `T`.
    pub anchor: usize,
    pub features: Matrix<f64>,
    pub labels: Vec<HorizonLabel>,
}

impl PriceWindow {
    pub fn label(&self, delta: usize) -> Option<&HorizonLabel> {
        self.labels.iter().find(|l| l.delta == delta)
    }
}

/// Builds the window of days `T-W+1 ..= T` (series indices). Features are
/// divided column-wise by the normalizer day's values; labels use raw
/// closes. Requires `T >= W` and `T + max(deltas) < len`.
pub fn make_window(
    series: &PriceSeries,
    t: usize,
    w: usize,
    deltas: &[usize],
    normalizer: Normalizer,
) -> Result<PriceWindow> {
    if w == 0 {
        return Err(Error::Range("window length must be positive".into()));
    }
    if t < w {
        return Err(Error::Range(format!(
            "{}: day {t} has fewer than {w} prior days plus a normalizer day",
            series.ticker
        )));
    }
    let max_delta = deltas.iter().copied().max().unwrap_or(0);
    if t + max_delta >= series.len() {
        return Err(Error::Range(format!(
            "{}: day {t} + horizon {max_delta} is past the last day {}",
            series.ticker,
            series.len().saturating_sub(1)
        )));
    }
    let norm_day = match normalizer {
        Normalizer::PreviousDay => t - w,
        Normalizer::FirstInWindow => t + 1 - w,
    };
    let base = series.row(norm_day);
    if base.iter().any(|&b| b == 0.0) {
        return Err(Error::Data(format!(
            "{}: zero normalizer value on {}",
            series.ticker, series.dates[norm_day]
        )));
    }
    let mut features = Matrix::zeros(w, N_FEATURES);
    for (r, day) in (t + 1 - w..=t).enumerate() {
        let row = series.row(day);
        for c in 0..N_FEATURES {
            features[(r, c)] = row[c] / base[c];
        }
    }
    Ok(PriceWindow {
        asset_id: series.asset_id,
        anchor: t,
        features,
        labels: deltas.iter().map(|&d| HorizonLabel::compute(series, t, d)).collect(),
    })
}

/// Indicator of the `k` largest returns; ties go to the smaller index.
pub fn make_topk_labels(returns: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..returns.len()).collect();
    order.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]).then(a.cmp(&b)));
    let mut out = vec![false; returns.len()];
    for &i in order.iter().take(k) {
        out[i] = true;
    }
    out
}

/// Asset indices sorted by descending score, ties to the smaller index.
pub fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}
