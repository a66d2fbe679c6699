use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::LossConfig;
use super::model::{DayInput, HawkesInputs, RankModel};
use crate::autodiff::Graph;
use crate::backtest::{ranking_metrics, DayScores, Relevance};
use crate::error::{Error, Result};
use crate::optim::OptimizerConfig;
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    /// Cutoff of the validation NDCG used for model selection.
    pub select_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            optimizer: OptimizerConfig::sgd(1e-5),
            loss: LossConfig::default(),
            select_k: 5,
            seed: 0,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub kge: f64,
    pub listwise: f64,
    pub pairwise: f64,
    pub direction: f64,
    pub topk: f64,
    pub val_ndcg: f64,
    pub val_acc1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseFit {
    /// Epoch of the selected parameters; 0 is the initialization.
    pub best_epoch: usize,
    pub best_val_ndcg: f64,
    pub log: Vec<EpochLog>,
}

/// Model scores for each day, spread over all market assets.
pub fn predict_days<S: Scalar>(
    model: &RankModel,
    store: &ParamStore<S>,
    days: &[DayInput<S>],
    hawkes: &HawkesInputs<S>,
    num_assets: usize,
) -> Result<Vec<DayScores>> {
    days.iter()
        .map(|d| {
            let scores = model.predict(store, d, hawkes)?;
            let mut all = vec![None; num_assets];
            for (&a, s) in d.assets.iter().zip(scores) {
                all[a] = Some(s);
            }
            Ok(DayScores { day: d.day, scores: all })
        })
        .collect()
}

/// Mean NDCG@k and ACC@1 of the model on labelled days.
pub fn validation_metrics<S: Scalar>(
    model: &RankModel,
    store: &ParamStore<S>,
    days: &[DayInput<S>],
    hawkes: &HawkesInputs<S>,
    k: usize,
) -> Result<(f64, f64)> {
    if days.is_empty() {
        return Ok((0.0, 0.0));
    }
    let (mut ndcg, mut acc) = (0.0, 0.0);
    for d in days {
        let scores = model.predict(store, d, hawkes)?;
        let local = DayScores {
            day: d.day,
            scores: scores.into_iter().map(Some).collect(),
        };
        let realized: Vec<Option<f64>> = d.returns.iter().map(|&r| Some(r)).collect();
        if let Some((n, _)) = ranking_metrics(&local, &realized, k, Relevance::Binary) {
            ndcg += n;
        }
        if let Some((_, a)) = ranking_metrics(&local, &realized, 1, Relevance::Binary) {
            acc += a;
        }
    }
    Ok((ndcg / days.len() as f64, acc / days.len() as f64))
}

/// Gradient descent over the training days, one step per day in a seeded
/// shuffled order. After every epoch the validation NDCG@k is measured and
/// the best parameters so far are kept; `store` ends holding them.
///
/// On a non-finite loss or gradient the last finite parameters are written
/// to `checkpoint` (when given) and a divergence error is returned.
pub fn train_phase<S: Scalar>(
    model: &RankModel,
    store: &mut ParamStore<S>,
    train: &[DayInput<S>],
    val: &[DayInput<S>],
    hawkes: &HawkesInputs<S>,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<PhaseFit> {
    cfg.loss.validate()?;
    let mut fit = PhaseFit {
        best_epoch: 0,
        best_val_ndcg: f64::NEG_INFINITY,
        log: Vec::new(),
    };
    if cfg.epochs == 0 {
        fit.best_val_ndcg = validation_metrics(model, store, val, hawkes, cfg.select_k)?.0;
        return Ok(fit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = cfg.optimizer.build::<S>();
    let mut best = store.clone();
    let with_kge = cfg.loss.alpha[0] > 0.0;
    let mut order: Vec<usize> = (0..train.len()).filter(|&i| train[i].len() >= 2).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 6];
        for &i in &order {
            let day = &train[i];
            let mut g = Graph::new();
            let out = model.forward(&mut g, store, day, hawkes, with_kge)?;
            let parts = model.loss(&mut g, &out, day, &cfg.loss);
            let total = g.scalar(parts.total).f64();
            let grads = g.backward(parts.total).param_grads();
            if !total.is_finite() || !grads.all_finite() {
                if let Some(path) = checkpoint {
                    store.to_checkpoint(serde_json::json!({"diverged_epoch": epoch})).save(path)?;
                }
                return Err(Error::Divergence(format!(
                    "{} loss became {total} in epoch {epoch} on day {}",
                    model.variant, day.day
                )));
            }
            let val_of = |v: Option<crate::autodiff::Var>| v.map_or(0.0, |v| g.scalar(v).f64());
            sums[0] += total;
            sums[1] += val_of(parts.kge);
            sums[2] += val_of(parts.listwise);
            sums[3] += val_of(parts.pairwise);
            sums[4] += g.scalar(parts.direction).f64();
            sums[5] += g.scalar(parts.topk).f64();
            opt.step(store, &grads);
        }
        let n = order.len().max(1) as f64;
        let (val_ndcg, val_acc1) = validation_metrics(model, store, val, hawkes, cfg.select_k)?;
        let entry = EpochLog {
            epoch,
            loss: sums[0] / n,
            kge: sums[1] / n,
            listwise: sums[2] / n,
            pairwise: sums[3] / n,
            direction: sums[4] / n,
            topk: sums[5] / n,
            val_ndcg,
            val_acc1,
        };
        debug!("{} epoch {epoch}: {entry:?}", model.variant);
        fit.log.push(entry);
        if val_ndcg > fit.best_val_ndcg {
            fit.best_val_ndcg = val_ndcg;
            fit.best_epoch = epoch;
            best = store.clone();
        }
    }
    info!(
        "{}: selected epoch {} (validation NDCG@{} {:.4})",
        model.variant, fit.best_epoch, cfg.select_k, fit.best_val_ndcg
    );
    *store = best;
    Ok(fit)
}
