//! Temporal point-process graph embeddings.
//!
//! Each KG event `(h, r, t, τ)` (τ in months) gets a score-scale intensity
//!
//! ```text
//! λ̃(h, r, t, τ) = −μ_r(h, t) + γ1 · m(h, τ) + γ2 · m(t, τ)
//! μ_r(h, t)     = ‖σ(W_e e_h + b) + e_r − σ(W_e e_t + b)‖²       σ = LeakyReLU(0.01)
//! m(x, τ)       = Σ_{(r', u', τ') ∈ N_{<τ}(x)} exp(−δ_{r'} (τ − τ')) · (−μ_{r'}(x ~ u'))
//! ```
//!
//! `μ` is a translation distance, so larger `λ̃` means more plausible. The
//! neighbourhood `N_{<τ}(x)` holds the most recent events of `x` strictly
//! before `τ`, each scored in its original orientation (`x` as head or as
//! tail). Decays `δ_r = softplus(raw_r)` are learned per relation type.
//!
//! Training contrasts every observed event with `K` corruptions whose tail
//! is resampled among entities of the same type, under the hinge
//! `max(0, margin − λ̃_pos + λ̃_neg)`.

use std::collections::BTreeMap;
use std::rc::Rc;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::kg::{EntityId, EventTuple, RelationTypeId, TemporalKG, YearMonth};
use crate::optim::OptimizerConfig;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HawkesConfig {
    pub dim: usize,
    pub margin: f64,
    /// Corruptions per observed event.
    pub negatives: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Most recent past events kept per node.
    pub history: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for HawkesConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            margin: 1.0,
            negatives: 5,
            epochs: 10,
            batch_size: 256,
            history: 32,
            optimizer: OptimizerConfig::sgd(1e-4),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HistoryItem {
    pub time: i64,
    pub relation: RelationTypeId,
    pub other: usize,
    /// Whether the indexed node was the head of the event.
    pub as_head: bool,
}

/// Per-node time-ordered event lists.
#[derive(Clone, Debug)]
pub struct EventHistory {
    per_node: Vec<Vec<HistoryItem>>,
    limit: usize,
}

impl EventHistory {
    pub fn new(model: &HawkesModel, events: &[EventTuple]) -> Self {
        let mut per_node = vec![Vec::new(); model.num_entities()];
        for e in events {
            let (Some(h), Some(t)) = (model.row(e.head), model.row(e.tail)) else {
                continue;
            };
            let time = e.timestamp.index();
            per_node[h].push(HistoryItem {
                time,
                relation: e.relation,
                other: t,
                as_head: true,
            });
            per_node[t].push(HistoryItem {
                time,
                relation: e.relation,
                other: h,
                as_head: false,
            });
        }
        for list in &mut per_node {
            list.sort_by_key(|i| (i.time, i.relation, i.other, i.as_head));
        }
        Self {
            per_node,
            limit: model.config.history,
        }
    }

    /// The most recent (up to the truncation limit) events of `node`
    /// strictly before `time`.
    pub fn before(&self, node: usize, time: i64) -> &[HistoryItem] {
        let list = &self.per_node[node];
        let end = list.partition_point(|i| i.time < time);
        &list[end.saturating_sub(self.limit)..end]
    }
}

/// One intensity query on entity rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Query {
    pub head: usize,
    pub relation: RelationTypeId,
    pub tail: usize,
    pub time: i64,
}

#[derive(Clone, Copy, Debug)]
pub struct HawkesParams {
    pub node_emb: ParamId,
    pub rel_emb: ParamId,
    pub w_e: ParamId,
    pub b_e: ParamId,
    pub gamma1: ParamId,
    pub gamma2: ParamId,
    /// `M x 1`, decay is `softplus(raw)`.
    pub delta_raw: ParamId,
}

#[derive(Clone, Debug)]
pub struct HawkesModel {
    pub config: HawkesConfig,
    pub params: HawkesParams,
    rows: BTreeMap<EntityId, usize>,
    row_ids: Vec<EntityId>,
    row_type: Vec<usize>,
    type_rows: Vec<Vec<usize>>,
    n_relations: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct HawkesTrainReport {
    pub epoch_losses: Vec<f64>,
    pub events: usize,
}

impl HawkesModel {
    /// One embedding row per KG entity and per relation-type slot.
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        kg: &TemporalKG,
        config: HawkesConfig,
        store: &mut ParamStore<S>,
        rng: &mut R,
    ) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::Config("Hawkes embedding size must be positive".into()));
        }
        let types = kg.entity_types();
        let type_pos: BTreeMap<&str, usize> = types.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let mut rows = BTreeMap::new();
        let mut row_ids = Vec::new();
        let mut row_type = Vec::new();
        let mut type_rows = vec![Vec::new(); types.len()];
        for (i, e) in kg.entities().values().enumerate() {
            rows.insert(e.id, i);
            row_ids.push(e.id);
            let t = type_pos[e.primary_label()];
            row_type.push(t);
            type_rows[t].push(i);
        }
        let n_relations = kg.num_relation_slots().max(1);
        let d = config.dim;
        let std = 1.0 / (d as f64).sqrt();
        let params = HawkesParams {
            node_emb: store.add("hawkes.node_emb", Matrix::randn(rows.len(), d, std, rng)),
            rel_emb: store.add("hawkes.rel_emb", Matrix::randn(n_relations, d, std, rng)),
            w_e: store.add("hawkes.w_e", Matrix::glorot(d, d, rng)),
            b_e: store.add("hawkes.b_e", Matrix::zeros(1, d)),
            gamma1: store.add("hawkes.gamma1", Matrix::scalar(S::of(0.1))),
            gamma2: store.add("hawkes.gamma2", Matrix::scalar(S::of(0.1))),
            delta_raw: store.add(
                "hawkes.delta_raw",
                Matrix::filled(n_relations, 1, S::of((1f64.exp() - 1.0).ln())),
            ),
        };
        Ok(Self {
            config,
            params,
            rows,
            row_ids,
            row_type,
            type_rows,
            n_relations,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.row_ids.len()
    }

    pub fn num_relations(&self) -> usize {
        self.n_relations
    }

    pub fn row(&self, id: EntityId) -> Option<usize> {
        self.rows.get(&id).copied()
    }

    pub fn entity_at(&self, row: usize) -> EntityId {
        self.row_ids[row]
    }

    pub fn query(&self, e: &EventTuple) -> Option<Query> {
        Some(Query {
            head: self.row(e.head)?,
            relation: e.relation,
            tail: self.row(e.tail)?,
            time: e.timestamp.index(),
        })
    }

    /// `μ` for aligned `heads`, `relations`, `tails` (entity rows): `m x 1`.
    fn base_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        heads: Vec<usize>,
        relations: Vec<usize>,
        tails: Vec<usize>,
    ) -> Var {
        let p = &self.params;
        let emb = g.param(store, p.node_emb);
        let rel = g.param(store, p.rel_emb);
        let w = g.param(store, p.w_e);
        let b = g.param(store, p.b_e);
        let eh = g.gather_rows(emb, Rc::new(heads));
        let et = g.gather_rows(emb, Rc::new(tails));
        let er = g.gather_rows(rel, Rc::new(relations));
        let ph = g.linear(eh, w, b);
        let ph = g.leaky_relu(ph, S::of(LEAKY_SLOPE));
        let pt = g.linear(et, w, b);
        let pt = g.leaky_relu(pt, S::of(LEAKY_SLOPE));
        let diff = g.add(ph, er);
        let diff = g.sub(diff, pt);
        let sq = g.square(diff);
        g.sum_cols(sq)
    }

    /// Mutual terms `m(node_q, time_q)` for every `(node, time)`: `q x 1`.
    fn mutual_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        history: &EventHistory,
        nodes: &[(usize, i64)],
    ) -> Var {
        let (mut heads, mut rels, mut tails, mut lags, mut owner) = (vec![], vec![], vec![], vec![], vec![]);
        for (q, &(node, time)) in nodes.iter().enumerate() {
            for item in history.before(node, time) {
                let (h, t) = if item.as_head { (node, item.other) } else { (item.other, node) };
                heads.push(h);
                tails.push(t);
                rels.push(item.relation as usize);
                lags.push(S::of((time - item.time) as f64));
                owner.push(q);
            }
        }
        if heads.is_empty() {
            return g.constant(Matrix::zeros(nodes.len(), 1));
        }
        let mu = self.base_graph(g, store, heads, rels.clone(), tails);
        let raw = g.param(store, self.params.delta_raw);
        let raw = g.gather_rows(raw, Rc::new(rels));
        let delta = g.softplus(raw);
        let lag = g.constant(Matrix::column_vector(&lags));
        let decay = g.mul(delta, lag);
        let decay = g.neg(decay);
        let weight = g.exp(decay);
        let contrib = g.mul(weight, mu);
        let contrib = g.neg(contrib);
        g.index_add_rows(contrib, Rc::new(owner), nodes.len())
    }

    /// `λ̃` for every query: `q x 1`.
    pub fn intensity_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        history: &EventHistory,
        queries: &[Query],
    ) -> Var {
        let mu = self.base_graph(
            g,
            store,
            queries.iter().map(|q| q.head).collect(),
            queries.iter().map(|q| q.relation as usize).collect(),
            queries.iter().map(|q| q.tail).collect(),
        );
        let nodes: Vec<(usize, i64)> = queries
            .iter()
            .map(|q| (q.head, q.time))
            .chain(queries.iter().map(|q| (q.tail, q.time)))
            .collect();
        let m = self.mutual_graph(g, store, history, &nodes);
        let n = queries.len();
        let mh = g.gather_rows(m, Rc::new((0..n).collect()));
        let mt = g.gather_rows(m, Rc::new((n..2 * n).collect()));
        let g1 = g.param(store, self.params.gamma1);
        let g2 = g.param(store, self.params.gamma2);
        let a = g.mul(mh, g1);
        let b = g.mul(mt, g2);
        let excite = g.add(a, b);
        g.sub(excite, mu)
    }

    pub fn intensities<S: Scalar>(&self, store: &ParamStore<S>, history: &EventHistory, queries: &[Query]) -> Vec<S> {
        if queries.is_empty() {
            return Vec::new();
        }
        let mut g = Graph::new();
        let v = self.intensity_graph(&mut g, store, history, queries);
        g.value(v).as_slice().to_vec()
    }

    fn rows_of(&self, h: EntityId, t: EntityId) -> Result<(usize, usize)> {
        let find = |id| self.row(id).ok_or_else(|| Error::Integrity(format!("unknown entity {id}")));
        Ok((find(h)?, find(t)?))
    }

    pub fn base_intensity<S: Scalar>(&self, store: &ParamStore<S>, h: EntityId, r: RelationTypeId, t: EntityId) -> Result<S> {
        let (h, t) = self.rows_of(h, t)?;
        let mut g = Graph::new();
        let v = self.base_graph(&mut g, store, vec![h], vec![r as usize], vec![t]);
        Ok(g.scalar(v))
    }

    pub fn mutual_intensity<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        history: &EventHistory,
        node: EntityId,
        time: YearMonth,
    ) -> Result<S> {
        let row = self.row(node).ok_or_else(|| Error::Integrity(format!("unknown entity {node}")))?;
        let mut g = Graph::new();
        let v = self.mutual_graph(&mut g, store, history, &[(row, time.index())]);
        Ok(g.scalar(v))
    }

    pub fn intensity<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        history: &EventHistory,
        h: EntityId,
        r: RelationTypeId,
        t: EntityId,
        time: YearMonth,
    ) -> Result<S> {
        let (head, tail) = self.rows_of(h, t)?;
        let q = Query {
            head,
            relation: r,
            tail,
            time: time.index(),
        };
        Ok(self.intensities(store, history, &[q])[0])
    }

    /// Tail corruption among entities of the tail's type (other than the
    /// tail itself); uniform over all entities when the type has no other
    /// member.
    pub fn corrupt_tail<R: Rng + ?Sized>(&self, tail: usize, rng: &mut R) -> (usize, bool) {
        let same = &self.type_rows[self.row_type[tail]];
        if same.len() >= 2 {
            loop {
                let c = same[rng.random_range(0..same.len())];
                if c != tail {
                    return (c, true);
                }
            }
        }
        let n = self.num_entities();
        if n < 2 {
            return (tail, false);
        }
        loop {
            let c = rng.random_range(0..n);
            if c != tail {
                return (c, false);
            }
        }
    }

    /// Mean hinge over (positive, corruption) pairs. `negatives[i]` pairs
    /// with `positives[i / K]`.
    pub fn loss_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        history: &EventHistory,
        positives: &[Query],
        negatives: &[Query],
    ) -> Var {
        let k = negatives.len() / positives.len().max(1);
        let mut all = positives.to_vec();
        all.extend_from_slice(negatives);
        let lam = self.intensity_graph(g, store, history, &all);
        let p = positives.len();
        let pos_idx: Vec<usize> = (0..negatives.len()).map(|i| i / k).collect();
        let neg_idx: Vec<usize> = (p..p + negatives.len()).collect();
        let lp = g.gather_rows(lam, Rc::new(pos_idx));
        let ln = g.gather_rows(lam, Rc::new(neg_idx));
        let gap = g.sub(ln, lp);
        let gap = g.add_scalar(gap, S::of(self.config.margin));
        let hinge = g.relu(gap);
        g.mean(hinge)
    }

    /// Fits the embeddings on `events` (history built from the same events).
    pub fn train<S: Scalar, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<S>,
        events: &[EventTuple],
        rng: &mut R,
    ) -> Result<HawkesTrainReport> {
        let history = EventHistory::new(self, events);
        let mut queries: Vec<Query> = events.iter().filter_map(|e| self.query(e)).collect();
        queries.sort_by_key(|q| q.time);
        let mut report = HawkesTrainReport {
            events: queries.len(),
            ..Default::default()
        };
        let k = self.config.negatives;
        if queries.is_empty() || k == 0 {
            return Ok(report);
        }
        let mut opt = self.config.optimizer.build::<S>();
        let mut fallback_warned = false;
        let bs = self.config.batch_size.max(1);
        for epoch in 0..self.config.epochs {
            queries.shuffle(rng);
            let mut total = 0.0;
            let mut batches = 0;
            for batch in queries.chunks(bs) {
                let mut negs = Vec::with_capacity(batch.len() * k);
                for q in batch {
                    for _ in 0..k {
                        let (tail, typed) = self.corrupt_tail(q.tail, rng);
                        if !typed && !fallback_warned {
                            warn!("no other entity shares the tail type; corrupting uniformly");
                            fallback_warned = true;
                        }
                        negs.push(Query { tail, ..*q });
                    }
                }
                let mut g = Graph::new();
                let loss = self.loss_graph(&mut g, store, &history, batch, &negs);
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Divergence(format!("Hawkes loss became {value} in epoch {epoch}")));
                }
                let grads = g.backward(loss).param_grads();
                opt.step(store, &grads);
                total += value.f64();
                batches += 1;
            }
            let mean = total / batches as f64;
            debug!("hawkes epoch {epoch}: loss {mean:.5}");
            report.epoch_losses.push(mean);
        }
        Ok(report)
    }

    /// Node embedding rows for the given entities, in order.
    pub fn node_embeddings<S: Scalar>(&self, store: &ParamStore<S>, ids: &[EntityId]) -> Result<Matrix<S>> {
        let emb = store.get(self.params.node_emb);
        let mut out = Matrix::zeros(ids.len(), self.config.dim);
        for (i, &id) in ids.iter().enumerate() {
            let r = self.row(id).ok_or_else(|| Error::Integrity(format!("unknown entity {id}")))?;
            out.row_mut(i).copy_from_slice(emb.row(r));
        }
        Ok(out)
    }

    /// Relation embeddings, one row per relation-type slot.
    pub fn relation_embeddings<S: Scalar>(&self, store: &ParamStore<S>) -> Matrix<S> {
        store.get(self.params.rel_emb).clone()
    }
}

/// Probability that a random positive scores above a random negative
/// (ties count one half).
pub fn separation_auc(pos: &[f64], neg: &[f64]) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return f64::NAN;
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&v| (v, true)).chain(neg.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // rank-sum with average ranks for ties
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += all[i..=j].iter().filter(|x| x.1).count() as f64 * avg;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}
