use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::{
    approx_ndcg_loss, bce_probabilities, direction_loss, pairwise_loss, softmax_scores, topk_loss, LossConfig,
};
use crate::autodiff::{Graph, Var};
use crate::backtest::min_max;
use crate::error::{Error, Result};
use crate::kg::{EntityId, TemporalKG};
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::relational::{EdgeSet, RelEncoderConfig, RelationalEncoder};
use crate::scalar::Scalar;
use crate::seq_encoder::{SeqEncoder, SeqEncoderConfig, SeqKind};
use crate::tensor::Matrix;

/// Model variants of the ablation study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Sequential, Hawkes and relational paths.
    #[default]
    Full,
    /// No Hawkes embeddings.
    WoTpp,
    /// No Hawkes embeddings and no sequential injection into the graph.
    WoSeq,
    /// No Hawkes embeddings and one shared entity-type projection.
    WoHk,
    /// Recurrent sequential encoder, otherwise as `WoTpp`.
    Lstm,
    /// Sequential encoder only, trained with pairwise plus direction loss.
    Transf,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::WoTpp,
        Variant::WoSeq,
        Variant::WoHk,
        Variant::Lstm,
        Variant::Transf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoTpp => "wotpp",
            Variant::WoSeq => "woseq",
            Variant::WoHk => "wohk",
            Variant::Lstm => "lstm",
            Variant::Transf => "transf",
        }
    }

    pub fn uses_hawkes(self) -> bool {
        self == Variant::Full
    }

    pub fn uses_graph(self) -> bool {
        self != Variant::Transf
    }

    pub fn injects_sequence(self) -> bool {
        !matches!(self, Variant::WoSeq | Variant::Transf)
    }

    pub fn homogeneous(self) -> bool {
        self == Variant::WoHk
    }

    pub fn seq_kind(self) -> SeqKind {
        if self == Variant::Lstm {
            SeqKind::Lstm
        } else {
            SeqKind::Transformer
        }
    }

    /// Trained with the pairwise ranking loss instead of the listwise one.
    pub fn baseline_loss(self) -> bool {
        self == Variant::Transf
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let key: String = key
            .trim_end_matches('*')
            .trim_end_matches("-baseline")
            .chars()
            .filter(|c| !matches!(c, '-' | '_'))
            .collect();
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub seq: SeqEncoderConfig,
    pub rel: RelEncoderConfig,
    /// Hawkes embedding size `d_tpp`.
    pub hawkes_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq: SeqEncoderConfig::default(),
            rel: RelEncoderConfig::default(),
            hawkes_dim: 128,
        }
    }
}

/// Pretrained Hawkes embeddings feeding the ranker, held constant.
#[derive(Clone, Debug, PartialEq)]
pub struct HawkesInputs<S> {
    /// One row per market asset.
    pub node: Matrix<S>,
    /// One row per relation type.
    pub relation: Matrix<S>,
}

impl<S: Scalar> HawkesInputs<S> {
    pub fn zeros(assets: usize, relations: usize, dim: usize) -> Self {
        Self {
            node: Matrix::zeros(assets, dim),
            relation: Matrix::zeros(relations, dim),
        }
    }
}

/// Everything the model needs for one trading day.
#[derive(Clone, Debug)]
pub struct DayInput<S> {
    pub day: usize,
    /// Market asset indices with a complete window, ascending.
    pub assets: Vec<usize>,
    /// One normalized `W x 5` window per entry of `assets`.
    pub windows: Vec<Matrix<S>>,
    pub edges: Option<EdgeSet>,
    /// Realized returns at the training horizon.
    pub returns: Vec<f64>,
    pub up: Vec<bool>,
}

impl<S> DayInput<S> {
    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }
}

/// Nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOut {
    pub logits: Var,
    /// Softmax over the day's assets, `N x 1`.
    pub scores: Var,
    pub kge: Option<Var>,
    pub attention: Vec<(usize, Var)>,
}

/// Loss terms of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub kge: Option<Var>,
    pub listwise: Option<Var>,
    pub pairwise: Option<Var>,
    pub direction: Var,
    pub topk: Var,
}

#[derive(Clone, Debug)]
pub struct RankModel {
    pub variant: Variant,
    pub config: ModelConfig,
    pub seq: SeqEncoder,
    pub rel: Option<RelationalEncoder>,
    pub head: Linear,
    /// Encoder row of every market asset.
    asset_rows: Vec<usize>,
    asset_entities: Vec<EntityId>,
}

impl RankModel {
    /// `asset_entities[i]` is the KG entity of market asset `i`.
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        kg: &TemporalKG,
        variant: Variant,
        config: ModelConfig,
        asset_entities: &[EntityId],
        store: &mut ParamStore<S>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut seq_cfg = config.seq;
        seq_cfg.kind = variant.seq_kind();
        let seq = SeqEncoder::new(seq_cfg, store, "seq", rng)?;
        let d_s = seq.output_dim();
        let d_tpp = config.hawkes_dim;
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = asset_entities.iter().find(|e| !seen.insert(**e)) {
            return Err(Error::Integrity(format!("entity {dup} is mapped to two assets")));
        }
        let (rel, asset_rows) = if variant.uses_graph() {
            let rel_cfg = RelEncoderConfig {
                homogeneous: variant.homogeneous(),
                ..config.rel
            };
            let rel = RelationalEncoder::new(kg, rel_cfg, d_s + d_tpp, d_tpp, store, rng)?;
            let rows = rel.asset_rows(asset_entities)?;
            (Some(rel), rows)
        } else {
            (None, Vec::new())
        };
        let head_in = if variant.uses_graph() { d_s + d_tpp + config.rel.dim } else { d_s };
        let head = Linear::new(store, "head", head_in, 1, rng);
        Ok(Self {
            variant,
            config: ModelConfig { seq: seq_cfg, ..config },
            seq,
            rel,
            head,
            asset_rows,
            asset_entities: asset_entities.to_vec(),
        })
    }

    pub fn asset_entities(&self) -> &[EntityId] {
        &self.asset_entities
    }

    /// Encoder rows of the given market assets.
    pub fn rows_of(&self, assets: &[usize]) -> Vec<usize> {
        assets.iter().map(|&a| self.asset_rows[a]).collect()
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        day: &DayInput<S>,
        hawkes: &HawkesInputs<S>,
        with_kge: bool,
    ) -> Result<ForwardOut> {
        if day.is_empty() {
            return Err(Error::Data(format!("day {} has no assets", day.day)));
        }
        let windows: Vec<&Matrix<S>> = day.windows.iter().collect();
        let s = self.seq.forward(g, store, &windows);
        let Some(rel) = &self.rel else {
            let logits = self.head.forward(g, store, s);
            let scores = softmax_scores(g, logits);
            return Ok(ForwardOut {
                logits,
                scores,
                kge: None,
                attention: Vec::new(),
            });
        };
        let d_tpp = self.config.hawkes_dim;
        let m = rel.num_relations();
        let zeros;
        let hk = if self.variant.uses_hawkes() {
            hawkes
        } else {
            zeros = HawkesInputs::zeros(hawkes.node.rows(), m, d_tpp);
            &zeros
        };
        let tpp = {
            let mut rows = Matrix::zeros(day.len(), d_tpp);
            for (i, &a) in day.assets.iter().enumerate() {
                if a >= hk.node.rows() {
                    return Err(Error::Integrity(format!("no Hawkes embedding for asset {a}")));
                }
                rows.row_mut(i).copy_from_slice(hk.node.row(a));
            }
            g.constant(rows)
        };
        let s_tpp = if d_tpp == 0 { s } else { g.concat_cols(&[s, tpp]) };
        let rows = self.rows_of(&day.assets);
        let features = rel.entity_features(g, store, &rows, self.variant.injects_sequence().then_some(s_tpp));
        let fused = rel.fused_relations(g, store, &hk.relation)?;
        let edges = day
            .edges
            .as_ref()
            .ok_or_else(|| Error::Data(format!("day {} has no graph snapshot", day.day)))?;
        let (e_h, attention) = rel.forward(g, store, edges, features, fused, &rows);
        let kge = with_kge.then(|| rel.kge_loss(g, store, edges, fused));
        let x = g.concat_cols(&[s_tpp, e_h]);
        let logits = self.head.forward(g, store, x);
        let scores = softmax_scores(g, logits);
        Ok(ForwardOut {
            logits,
            scores,
            kge,
            attention,
        })
    }

    /// Weighted objective. Full variants: `α1 L1 + α2 L2 + α3 L3 + α4 L4`;
    /// the sequential baseline: `α2 · pairwise + α3 L3`.
    pub fn loss<S: Scalar>(&self, g: &mut Graph<S>, out: &ForwardOut, day: &DayInput<S>, cfg: &LossConfig) -> LossParts {
        let [a1, a2, a3, a4] = cfg.alpha;
        let p = bce_probabilities(g, out.scores, out.logits, cfg);
        let direction = direction_loss(g, p, &day.up);
        let k = cfg.k.min(day.len());
        let topk = topk_loss(g, p, &crate::market::make_topk_labels(&day.returns, k));
        let w_dir = g.scale(direction, S::of(a3));
        if self.variant.baseline_loss() {
            let pair = pairwise_loss(g, out.scores, &day.returns);
            let w_pair = g.scale(pair, S::of(a2));
            let total = g.add(w_pair, w_dir);
            return LossParts {
                total,
                kge: None,
                listwise: None,
                pairwise: Some(pair),
                direction,
                topk,
            };
        }
        let listwise = approx_ndcg_loss(g, out.scores, &min_max(&day.returns), cfg.temperature);
        let mut total = g.scale(listwise, S::of(a2));
        total = g.add(total, w_dir);
        let w_top = g.scale(topk, S::of(a4));
        total = g.add(total, w_top);
        if let Some(kge) = out.kge {
            let w = g.scale(kge, S::of(a1));
            total = g.add(total, w);
        }
        LossParts {
            total,
            kge: out.kge,
            listwise: Some(listwise),
            pairwise: None,
            direction,
            topk,
        }
    }

    /// Softmax scores of one day, one per entry of `day.assets`.
    pub fn predict<S: Scalar>(&self, store: &ParamStore<S>, day: &DayInput<S>, hawkes: &HawkesInputs<S>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, day, hawkes, false)?;
        let v = g.value(out.scores).to_f64_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite scores on day {}", day.day)));
        }
        Ok(v)
    }
}
