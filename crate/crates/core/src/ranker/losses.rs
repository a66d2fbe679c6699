use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// How the softmax scores become per-asset probabilities for the binary
/// cross-entropy terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BceMode {
    /// `clamp(N * Ŷ, ε, 1 - ε)`.
    #[default]
    Rescaled,
    /// `clamp(Ŷ, ε, 1 - ε)`.
    Raw,
    /// Per-asset sigmoid of the head logits.
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weights of the translation, listwise, direction and top-k terms.
    pub alpha: [f64; 4],
    pub temperature: f64,
    /// Size of the top-k target set.
    pub k: usize,
    pub bce: BceMode,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: [1.0; 4],
            temperature: 0.1,
            k: 5,
            bce: BceMode::Rescaled,
            epsilon: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if self.alpha.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::Config(format!("loss weights {:?} must be non-negative", self.alpha)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Config(format!("epsilon {} must lie in (0, 0.5)", self.epsilon)));
        }
        if self.k == 0 {
            return Err(Error::Config("top-k size must be positive".into()));
        }
        Ok(())
    }
}

/// Softmax over assets of an `N x 1` logit column.
pub fn softmax_scores<S: Scalar>(g: &mut Graph<S>, logits: Var) -> Var {
    let row = g.transpose(logits);
    let p = g.softmax_rows(row);
    g.transpose(p)
}

/// Gain `2^rel - 1` and the ideal DCG of those gains.
fn gains_and_ideal(relevance: &[f64]) -> (Vec<f64>, f64) {
    let gains: Vec<f64> = relevance.iter().map(|r| r.exp2() - 1.0).collect();
    let mut sorted = gains.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let ideal = sorted
        .iter()
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum();
    (gains, ideal)
}

/// Smooth ranks `1 + Σ_{j≠i} σ((s_j - s_i) / T)` of an `N x 1` column.
pub fn smooth_ranks<S: Scalar>(g: &mut Graph<S>, scores: Var, temperature: f64) -> Var {
    let d = g.pairwise_diff(scores);
    let d = g.scale(d, S::of(1.0 / temperature));
    let s = g.sigmoid(d);
    let sums = g.sum_cols(s);
    // the diagonal contributes σ(0) = 1/2
    g.add_scalar(sums, S::of(0.5))
}

/// Negated smooth NDCG: `-Σ (2^rel_i - 1) / log2(1 + rank_i) / IDCG`. Zero
/// when every relevance is zero.
pub fn approx_ndcg_loss<S: Scalar>(g: &mut Graph<S>, scores: Var, relevance: &[f64], temperature: f64) -> Var {
    let (gains, ideal) = gains_and_ideal(relevance);
    if ideal <= 0.0 {
        return g.constant_scalar(S::zero());
    }
    let ranks = smooth_ranks(g, scores, temperature);
    let denom = g.add_scalar(ranks, S::one());
    let denom = g.ln(denom);
    let denom = g.scale(denom, S::of(1.0 / std::f64::consts::LN_2));
    let gains = g.constant(Matrix::column_vector(&gains.iter().map(|&v| S::of(v)).collect::<Vec<_>>()));
    let terms = g.div(gains, denom);
    let dcg = g.sum(terms);
    g.scale(dcg, S::of(-1.0 / ideal))
}

/// Per-asset probabilities for the cross-entropy terms.
pub fn bce_probabilities<S: Scalar>(g: &mut Graph<S>, scores: Var, logits: Var, cfg: &LossConfig) -> Var {
    let eps = S::of(cfg.epsilon);
    match cfg.bce {
        BceMode::Rescaled => {
            let n = g.shape(scores).0;
            let p = g.scale(scores, S::of_usize(n));
            g.clamp(p, eps, S::one() - eps)
        }
        BceMode::Raw => g.clamp(scores, eps, S::one() - eps),
        BceMode::Sigmoid => {
            let p = g.sigmoid(logits);
            g.clamp(p, eps, S::one() - eps)
        }
    }
}

/// Mean binary cross-entropy of probabilities `p` (`N x 1`) against 0/1
/// targets.
pub fn bce_loss<S: Scalar>(g: &mut Graph<S>, p: Var, targets: &[bool]) -> Var {
    let y: Vec<S> = targets.iter().map(|&t| if t { S::one() } else { S::zero() }).collect();
    let not_y: Vec<S> = targets.iter().map(|&t| if t { S::zero() } else { S::one() }).collect();
    let y = g.constant(Matrix::column_vector(&y));
    let not_y = g.constant(Matrix::column_vector(&not_y));
    let lp = g.ln(p);
    let q = g.neg(p);
    let q = g.add_scalar(q, S::one());
    let lq = g.ln(q);
    let a = g.mul(y, lp);
    let b = g.mul(not_y, lq);
    let s = g.add(a, b);
    let m = g.mean(s);
    g.neg(m)
}

/// Direction loss against up/down targets.
pub fn direction_loss<S: Scalar>(g: &mut Graph<S>, p: Var, up: &[bool]) -> Var {
    bce_loss(g, p, up)
}

/// Top-k membership loss.
pub fn topk_loss<S: Scalar>(g: &mut Graph<S>, p: Var, in_topk: &[bool]) -> Var {
    bce_loss(g, p, in_topk)
}

/// `Σ_{i<j} max(0, -(Ŷ_i - Ŷ_j)(y_i - y_j))`. Tied pairs contribute
/// nothing and are left out.
pub fn pairwise_loss<S: Scalar>(g: &mut Graph<S>, scores: Var, truth: &[f64]) -> Var {
    let n = truth.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| truth[i] != truth[j])
        .collect();
    if pairs.is_empty() {
        return g.constant(Matrix::scalar(S::zero()));
    }
    // row p of `select` maps scores to Ŷ_i - Ŷ_j
    let mut select = Matrix::zeros(pairs.len(), n);
    let mut yd = Matrix::zeros(pairs.len(), 1);
    for (p, &(i, j)) in pairs.iter().enumerate() {
        select[(p, i)] = S::one();
        select[(p, j)] = -S::one();
        yd[(p, 0)] = S::of(truth[j] - truth[i]);
    }
    let select = g.constant(select);
    let pd = g.matmul(select, scores);
    let yd = g.constant(yd);
    let prod = g.mul(pd, yd);
    let hinge = g.relu(prod);
    g.sum(hinge)
}
