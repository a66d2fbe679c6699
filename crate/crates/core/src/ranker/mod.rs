//! Scoring head, ranking losses, model variants and per-phase training.

mod losses;
mod model;
mod train;

pub use losses::{
    approx_ndcg_loss, bce_loss, bce_probabilities, direction_loss, pairwise_loss, smooth_ranks, softmax_scores,
    topk_loss, BceMode, LossConfig,
};
pub use model::{DayInput, ForwardOut, HawkesInputs, LossParts, ModelConfig, RankModel, Variant};
pub use train::{predict_days, train_phase, validation_metrics, EpochLog, PhaseFit, TrainConfig};
