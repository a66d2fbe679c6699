use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::make_topk_labels;

/// Average number of trading days in a year.
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// Percent change from `initial` to `final_value`.
pub fn irr(initial: f64, final_value: f64) -> Result<f64> {
    if !(initial > 0.0) {
        return Err(Error::Domain(format!("initial value {initial} must be positive")));
    }
    Ok((final_value - initial) / initial * 100.0)
}

/// Annualizes a per-interval return: `((1 + ROI)^(252/Δ) - 1) * 100` with
/// `ROI = irr_percent / 100`.
pub fn airr(irr_percent: f64, delta: usize) -> Result<f64> {
    if delta == 0 {
        return Err(Error::Domain("holding period must be positive".into()));
    }
    let growth = 1.0 + irr_percent / 100.0;
    if !(growth > 0.0) {
        return Err(Error::Domain(format!("IRR {irr_percent}% loses the whole stake")));
    }
    Ok((growth.powf(TRADING_DAYS_PER_YEAR / delta as f64) - 1.0) * 100.0)
}

/// Sample mean and standard deviation (`n - 1` denominator). The deviation
/// is missing for fewer than two values.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(var.sqrt()))
}

/// `(mean(returns) - risk_free) / std(returns)`; missing when fewer than two
/// returns or zero deviation.
pub fn sharpe(returns: &[f64], risk_free: f64) -> Option<f64> {
    if returns.len() < 2 {
        return None;
    }
    let (mean, std) = mean_std(returns);
    let std = std?;
    if std == 0.0 || !std.is_finite() {
        return None;
    }
    Some((mean - risk_free) / std)
}

/// How NDCG relevance is derived from realized returns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relevance {
    /// 1 for the true top-k assets, 0 otherwise.
    #[default]
    Binary,
    /// Returns min-max scaled to `[0, 1]` within the day.
    Graded,
}

/// Per-asset relevance for one day.
pub fn relevance(returns: &[f64], k: usize, mode: Relevance) -> Vec<f64> {
    match mode {
        Relevance::Binary => make_topk_labels(returns, k)
            .into_iter()
            .map(|b| if b { 1.0 } else { 0.0 })
            .collect(),
        Relevance::Graded => min_max(returns),
    }
}

/// Scales to `[0, 1]`; all zeros when the values are constant.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

fn dcg(order: impl Iterator<Item = f64>) -> f64 {
    order
        .enumerate()
        .map(|(i, rel)| rel / ((i + 2) as f64).log2())
        .sum()
}

/// `DCG@k / IDCG@k` for the predicted `order` (asset indices, best first);
/// 0 when no relevant item exists.
pub fn ndcg_at_k(order: &[usize], relevance: &[f64], k: usize) -> f64 {
    let k = k.min(order.len());
    let got = dcg(order.iter().take(k).map(|&i| relevance[i]));
    let mut ideal: Vec<f64> = relevance.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let best = dcg(ideal.into_iter().take(k));
    if best <= 0.0 {
        0.0
    } else {
        got / best
    }
}

/// `|predicted ∩ truth| / |truth| * 100`.
pub fn acc_at_k(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().filter(|p| truth.contains(p)).count();
    hits as f64 / truth.len() as f64 * 100.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn irr_examples() {
        assert_eq!(irr(100.0, 100.0).unwrap(), 0.0);
        assert!((irr(100.0, 110.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((irr(100.0, 87.5).unwrap() + 12.5).abs() < 1e-12);
        assert!(irr(0.0, 1.0).is_err());
    }

    #[test]
    fn airr_rejects_total_loss() {
        assert!(matches!(airr(-100.0, 5), Err(Error::Domain(_))));
        assert_eq!(airr(0.0, 20).unwrap(), 0.0);
    }

    #[test]
    fn sharpe_degenerate_is_missing() {
        assert_eq!(sharpe(&[0.01, 0.01, 0.01], 0.01), None);
        assert_eq!(sharpe(&[0.01], 0.0), None);
        assert!(sharpe(&[0.02, 0.0], 0.01).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ndcg_single_item() {
        let rel = [0.0, 1.0, 0.0];
        assert_eq!(ndcg_at_k(&[1, 0, 2], &rel, 1), 1.0);
        assert_eq!(ndcg_at_k(&[0, 1, 2], &rel, 1), 0.0);
        assert!((ndcg_at_k(&[0, 1, 2], &rel, 2) - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&[0, 1, 2], &[0.0; 3], 2), 0.0);
    }

    #[test]
    fn acc_examples() {
        assert_eq!(acc_at_k(&[1, 2, 3, 4, 5], &[5, 4, 3, 2, 1]), 100.0);
        assert_eq!(acc_at_k(&[1, 2], &[3, 4]), 0.0);
        assert!((acc_at_k(&[1, 2, 3, 4, 5], &[1, 2, 6, 7, 8]) - 40.0).abs() < 1e-12);
    }
}
