//! Relational encoder: heterogeneous edge-featured graph attention over a
//! KG snapshot.
//!
//! Entity features are learnable embeddings `e^n`, with the projected
//! sequential/Hawkes embeddings of asset nodes added on top. Relation
//! embeddings are fused with the Hawkes relation embeddings,
//! `e^r = [e_r ‖ e^r_tpp] W_{r,tpp}`, and every edge carries the attribute
//! `e^e = e^r + e^τ` where `e^τ` sums month/day/hour tables at the
//! relation's start date.
//!
//! Each attention layer:
//!
//! ```text
//! h'_i   = x_i P_{type(i)}                      (per node-type projection)
//! a'_e   = e^e_e A                              (edge-attribute projection)
//! s_e,k  = LeakyReLU_{0.2}(h'_src a_k + a'_e b_k + h'_dst c_k)
//! α_e,k  = softmax of s_·,k over the edges entering dst
//! out_i  = ELU( ‖_k Σ_{e → i} α_e,k [h'_src ‖ a'_e] V_{type(e)}[:, k] + h'_i R )
//! ```
//!
//! Edges run in both directions (the reverse direction has its own value
//! projection). Nodes with no incoming edge get a self-loop with a zero
//! attribute and a dedicated value projection, so every node has at least
//! one in-edge. Two such layers are followed by two linear layers with an
//! ELU between them.

use std::collections::BTreeMap;
use std::rc::Rc;

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationInstance, Snapshot, TemporalKG};
use crate::nn::Linear;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const ATTENTION_SLOPE: f64 = 0.2;

/// Which relations feed the translation-consistency loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KgeSource {
    /// Static and temporal relations of the snapshot.
    #[default]
    Snapshot,
    Static,
    Temporal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelEncoderConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// One shared input projection for all entity types.
    pub homogeneous: bool,
    pub kge_source: KgeSource,
}

impl Default for RelEncoderConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            heads: 2,
            layers: 2,
            homogeneous: false,
            kge_source: KgeSource::Snapshot,
        }
    }
}

#[derive(Clone, Debug)]
struct HeatLayer {
    node_proj: Vec<ParamId>,
    edge_proj: ParamId,
    att_src: ParamId,
    att_edge: ParamId,
    att_dst: ParamId,
    /// Indexed by edge kind: forward relation r at `r`, reverse at `M + r`,
    /// self-loop at `2M`.
    value: Vec<ParamId>,
    root: ParamId,
}

#[derive(Clone, Debug)]
pub struct RelEncoderParams {
    pub entity_emb: ParamId,
    pub relation_emb: ParamId,
    pub fuse: ParamId,
    pub month: ParamId,
    pub day: ParamId,
    pub hour: ParamId,
    pub asset_proj: ParamId,
    layers: Vec<HeatLayer>,
    out1: Linear,
    out2: Linear,
}

#[derive(Clone, Debug)]
pub struct RelationalEncoder {
    pub config: RelEncoderConfig,
    pub params: RelEncoderParams,
    rows: BTreeMap<EntityId, usize>,
    row_ids: Vec<EntityId>,
    row_type: Vec<usize>,
    n_relations: usize,
    relation_names: Vec<String>,
    hawkes_dim: usize,
}

/// Edges of one snapshot in encoder row space.
#[derive(Clone, Debug)]
pub struct EdgeSet {
    pub at: Option<NaiveDate>,
    pub src: Rc<Vec<usize>>,
    pub dst: Rc<Vec<usize>>,
    /// Edge kind, see the layer's value projections.
    pub kind: Vec<usize>,
    /// Relations behind the non-self edges (each appears twice: forward,
    /// then reverse).
    n_relations_edges: usize,
    rel_ids: Rc<Vec<usize>>,
    months: Rc<Vec<usize>>,
    days: Rc<Vec<usize>>,
    groups: Vec<(usize, Rc<Vec<usize>>)>,
    /// Relations used by the translation loss.
    kge: Vec<(usize, usize, usize, usize, usize)>,
}

impl EdgeSet {
    pub fn num_edges(&self) -> usize {
        self.src.len()
    }
}

/// Attention weights of one layer, one row per edge and one column per head.
#[derive(Clone, Debug)]
pub struct LayerAttention {
    pub layer: usize,
    pub weights: Matrix<f64>,
}

/// One aggregated attention row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub asset: String,
    pub relation_type: String,
    pub time_bucket: String,
    pub layer: usize,
    pub mean_weight: f64,
}

/// Accumulates mean attention on edges entering asset nodes, keyed by
/// (asset, relation type, month of the snapshot, layer).
#[derive(Clone, Debug, Default)]
pub struct AttentionReport {
    cells: BTreeMap<(String, String, String, usize), (f64, usize)>,
    /// Isolated asset nodes that fell back to a self-loop.
    pub self_loop_assets: BTreeMap<String, usize>,
}

impl AttentionReport {
    pub fn records(&self) -> Vec<AttentionRecord> {
        self.cells
            .iter()
            .map(|((asset, rel, bucket, layer), (sum, n))| AttentionRecord {
                asset: asset.clone(),
                relation_type: rel.clone(),
                time_bucket: bucket.clone(),
                layer: *layer,
                mean_weight: sum / *n as f64,
            })
            .collect()
    }

    pub fn merge(&mut self, other: &AttentionReport) {
        for (k, (s, n)) in &other.cells {
            let e = self.cells.entry(k.clone()).or_insert((0.0, 0));
            e.0 += s;
            e.1 += n;
        }
        for (k, n) in &other.self_loop_assets {
            *self.self_loop_assets.entry(k.clone()).or_insert(0) += n;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("asset,relation_type,time_bucket,layer,mean_weight\n");
        for r in self.records() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.asset, r.relation_type, r.time_bucket, r.layer, r.mean_weight
            ));
        }
        out
    }
}

fn glorot<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, name: String, r: usize, c: usize, rng: &mut R) -> ParamId {
    store.add(name, Matrix::glorot(r, c, rng))
}

impl RelationalEncoder {
    /// `asset_in_dim` is `d_s + d_tpp`; `hawkes_dim` is `d_tpp`.
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        kg: &TemporalKG,
        config: RelEncoderConfig,
        asset_in_dim: usize,
        hawkes_dim: usize,
        store: &mut ParamStore<S>,
        rng: &mut R,
    ) -> Result<Self> {
        let d = config.dim;
        if d == 0 || config.heads == 0 || d % config.heads != 0 {
            return Err(Error::Config(format!(
                "relational embedding size {d} must be a positive multiple of {} heads",
                config.heads
            )));
        }
        let types = kg.entity_types();
        let type_pos: BTreeMap<&str, usize> = types.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let mut rows = BTreeMap::new();
        let mut row_ids = Vec::new();
        let mut row_type = Vec::new();
        for (i, e) in kg.entities().values().enumerate() {
            rows.insert(e.id, i);
            row_ids.push(e.id);
            row_type.push(if config.homogeneous { 0 } else { type_pos[e.primary_label()] });
        }
        let n_types = if config.homogeneous { 1 } else { types.len().max(1) };
        let m = kg.num_relation_slots().max(1);
        let relation_names = (0..m as u32)
            .map(|r| kg.relation_type_name(r).unwrap_or("?").to_string())
            .collect();
        let h = config.heads;
        let layers = (0..config.layers)
            .map(|l| HeatLayer {
                node_proj: (0..n_types)
                    .map(|t| glorot(store, format!("rel.layer{l}.node_proj{t}"), d, d, rng))
                    .collect(),
                edge_proj: glorot(store, format!("rel.layer{l}.edge_proj"), d, d, rng),
                att_src: glorot(store, format!("rel.layer{l}.att_src"), d, h, rng),
                att_edge: glorot(store, format!("rel.layer{l}.att_edge"), d, h, rng),
                att_dst: glorot(store, format!("rel.layer{l}.att_dst"), d, h, rng),
                value: (0..2 * m + 1)
                    .map(|k| glorot(store, format!("rel.layer{l}.value{k}"), 2 * d, d, rng))
                    .collect(),
                root: glorot(store, format!("rel.layer{l}.root"), d, d, rng),
            })
            .collect();
        let params = RelEncoderParams {
            entity_emb: store.add("rel.entity_emb", Matrix::randn(rows.len(), d, 1.0, rng)),
            relation_emb: store.add("rel.relation_emb", Matrix::randn(m, d, 1.0, rng)),
            fuse: glorot(store, "rel.fuse".into(), d + hawkes_dim, d, rng),
            month: store.add("rel.time_month", Matrix::randn(12, d, 1.0, rng)),
            day: store.add("rel.time_day", Matrix::randn(31, d, 1.0, rng)),
            hour: store.add("rel.time_hour", Matrix::randn(24, d, 1.0, rng)),
            asset_proj: glorot(store, "rel.asset_proj".into(), asset_in_dim, d, rng),
            layers,
            out1: Linear::new(store, "rel.out1", d, d, rng),
            out2: Linear::new(store, "rel.out2", d, d, rng),
        };
        Ok(Self {
            config,
            params,
            rows,
            row_ids,
            row_type,
            n_relations: m,
            relation_names,
            hawkes_dim,
        })
    }

    pub fn row(&self, id: EntityId) -> Option<usize> {
        self.rows.get(&id).copied()
    }

    pub fn num_entities(&self) -> usize {
        self.row_ids.len()
    }

    pub fn num_relations(&self) -> usize {
        self.n_relations
    }

    pub fn hawkes_dim(&self) -> usize {
        self.hawkes_dim
    }

    /// Encoder rows of the given asset entities.
    pub fn asset_rows(&self, assets: &[EntityId]) -> Result<Vec<usize>> {
        assets
            .iter()
            .map(|&a| self.row(a).ok_or_else(|| Error::Integrity(format!("asset entity {a} is not in the graph"))))
            .collect()
    }

    /// Prepares the edge lists of a snapshot.
    pub fn edges(&self, snapshot: &Snapshot<'_>) -> EdgeSet {
        let rels: Vec<&RelationInstance> = snapshot.edges().collect();
        let m = self.n_relations;
        let (mut src, mut dst, mut kind) = (vec![], vec![], vec![]);
        let (mut rel_ids, mut months, mut days) = (vec![], vec![], vec![]);
        let mut kge = Vec::new();
        let mut resolved = Vec::with_capacity(rels.len());
        for r in &rels {
            let (Some(h), Some(t)) = (self.row(r.head), self.row(r.tail)) else { continue };
            resolved.push((h, t, r.relation_type as usize, r.valid_from));
            let use_kge = match self.config.kge_source {
                KgeSource::Snapshot => true,
                KgeSource::Static => r.is_static(),
                KgeSource::Temporal => !r.is_static(),
            };
            if use_kge {
                kge.push((
                    h,
                    r.relation_type as usize,
                    t,
                    r.valid_from.month0() as usize,
                    r.valid_from.day0() as usize,
                ));
            }
        }
        for &(h, t, r, from) in &resolved {
            src.push(h);
            dst.push(t);
            kind.push(r);
            rel_ids.push(r);
            months.push(from.month0() as usize);
            days.push(from.day0() as usize);
        }
        for &(h, t, r, _) in &resolved {
            src.push(t);
            dst.push(h);
            kind.push(m + r);
        }
        let n_rel_edges = resolved.len();
        let mut has_in = vec![false; self.num_entities()];
        for &d in &dst {
            has_in[d] = true;
        }
        for (node, _) in has_in.iter().enumerate().filter(|(_, &x)| !x) {
            src.push(node);
            dst.push(node);
            kind.push(2 * m);
        }
        let mut by_kind: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (e, &k) in kind.iter().enumerate() {
            by_kind.entry(k).or_default().push(e);
        }
        EdgeSet {
            at: snapshot.at,
            src: Rc::new(src),
            dst: Rc::new(dst),
            kind,
            n_relations_edges: n_rel_edges,
            rel_ids: Rc::new(rel_ids),
            months: Rc::new(months),
            days: Rc::new(days),
            groups: by_kind.into_iter().map(|(k, v)| (k, Rc::new(v))).collect(),
            kge,
        }
    }

    /// `e^τ` rows for the given zero-based month and day indices (hour 0).
    pub fn time_embedding_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        months: Rc<Vec<usize>>,
        days: Rc<Vec<usize>>,
    ) -> Var {
        let n = months.len();
        let mt = g.param(store, self.params.month);
        let dt = g.param(store, self.params.day);
        let ht = g.param(store, self.params.hour);
        let a = g.gather_rows(mt, months);
        let b = g.gather_rows(dt, days);
        let c = g.gather_rows(ht, Rc::new(vec![0; n]));
        let ab = g.add(a, b);
        g.add(ab, c)
    }

    /// Plain-value `e^τ` for one date.
    pub fn time_embedding<S: Scalar>(&self, store: &ParamStore<S>, date: NaiveDate) -> Vec<S> {
        let mut g = Graph::new();
        let v = self.time_embedding_graph(
            &mut g,
            store,
            Rc::new(vec![date.month0() as usize]),
            Rc::new(vec![date.day0() as usize]),
        );
        g.value(v).row(0).to_vec()
    }

    /// Fused relation table `[e_r ‖ e^r_tpp] W_{r,tpp}`: `M x d`.
    pub fn fused_relations<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, hawkes_rel: &Matrix<S>) -> Result<Var> {
        if hawkes_rel.shape() != (self.n_relations, self.hawkes_dim) {
            return Err(Error::Config(format!(
                "Hawkes relation table is {:?}, encoder expects {:?}",
                hawkes_rel.shape(),
                (self.n_relations, self.hawkes_dim)
            )));
        }
        let er = g.param(store, self.params.relation_emb);
        let w = g.param(store, self.params.fuse);
        let cat = if self.hawkes_dim == 0 {
            er
        } else {
            let hk = g.constant(hawkes_rel.clone());
            g.concat_cols(&[er, hk])
        };
        Ok(g.matmul(cat, w))
    }

    /// Entity feature matrix: `e^n`, plus the projected asset features on
    /// the asset rows when given.
    pub fn entity_features<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        asset_rows: &[usize],
        asset_features: Option<Var>,
    ) -> Var {
        let en = g.param(store, self.params.entity_emb);
        match asset_features {
            None => en,
            Some(x) => {
                let w = g.param(store, self.params.asset_proj);
                let proj = g.matmul(x, w);
                let scattered = g.index_add_rows(proj, Rc::new(asset_rows.to_vec()), self.num_entities());
                g.add(en, scattered)
            }
        }
    }

    /// Edge attributes `e^r + e^τ` (zero on self-loops): `E x d`.
    fn edge_attributes<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, edges: &EdgeSet, fused: Var) -> Var {
        let d = self.config.dim;
        let n_self = edges.num_edges() - 2 * edges.n_relations_edges;
        let mut parts = Vec::new();
        if edges.n_relations_edges > 0 {
            let er = g.gather_rows(fused, edges.rel_ids.clone());
            let et = self.time_embedding_graph(g, store, edges.months.clone(), edges.days.clone());
            let attr = g.add(er, et);
            parts.push(attr);
            parts.push(attr);
        }
        if n_self > 0 {
            parts.push(g.constant(Matrix::zeros(n_self, d)));
        }
        g.concat_rows(&parts)
    }

    fn heat_layer<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        layer: &HeatLayer,
        edges: &EdgeSet,
        x: Var,
        attr: Var,
    ) -> (Var, Var) {
        let n = self.num_entities();
        let d = self.config.dim;
        let heads = self.config.heads;
        let dh = d / heads;

        // per node-type input projection
        let hp = if layer.node_proj.len() == 1 {
            let p = g.param(store, layer.node_proj[0]);
            g.matmul(x, p)
        } else {
            let mut by_type: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &t) in self.row_type.iter().enumerate() {
                by_type.entry(t).or_default().push(i);
            }
            let mut acc = None;
            for (t, idx) in by_type {
                let idx = Rc::new(idx);
                let xs = g.gather_rows(x, idx.clone());
                let p = g.param(store, layer.node_proj[t]);
                let ys = g.matmul(xs, p);
                let back = g.index_add_rows(ys, idx, n);
                acc = Some(match acc {
                    None => back,
                    Some(a) => g.add(a, back),
                });
            }
            acc.expect("graph has entities")
        };
        let ep = g.param(store, layer.edge_proj);
        let ap = g.matmul(attr, ep);

        let a_src = g.param(store, layer.att_src);
        let a_edge = g.param(store, layer.att_edge);
        let a_dst = g.param(store, layer.att_dst);
        let s_src = g.matmul(hp, a_src);
        let s_dst = g.matmul(hp, a_dst);
        let s_src = g.gather_rows(s_src, edges.src.clone());
        let s_dst = g.gather_rows(s_dst, edges.dst.clone());
        let s_edge = g.matmul(ap, a_edge);
        let s = g.add(s_src, s_edge);
        let s = g.add(s, s_dst);
        let s = g.leaky_relu(s, S::of(ATTENTION_SLOPE));
        let alpha = g.segment_softmax(s, edges.dst.clone(), n);

        // per edge-kind value projection of [h'_src ‖ a'_e]
        let h_src = g.gather_rows(hp, edges.src.clone());
        let msg_in = g.concat_cols(&[h_src, ap]);
        let mut values = None;
        for (k, idx) in &edges.groups {
            let xs = g.gather_rows(msg_in, idx.clone());
            let v = g.param(store, layer.value[*k]);
            let ys = g.matmul(xs, v);
            let back = g.index_add_rows(ys, idx.clone(), edges.num_edges());
            values = Some(match values {
                None => back,
                Some(a) => g.add(a, back),
            });
        }
        let values = values.expect("every node has an in-edge");

        let mut head_out = Vec::with_capacity(heads);
        for k in 0..heads {
            let vk = g.slice_cols(values, k * dh, dh);
            let ak = g.slice_cols(alpha, k, 1);
            let weighted = g.mul(vk, ak);
            head_out.push(g.index_add_rows(weighted, edges.dst.clone(), n));
        }
        let agg = if heads == 1 { head_out[0] } else { g.concat_cols(&head_out) };
        let root = g.param(store, layer.root);
        let skip = g.matmul(hp, root);
        let out = g.add(agg, skip);
        (g.elu(out), alpha)
    }

    /// Runs the attention layers and output layers; returns the asset rows
    /// `E_h` and per-layer attention weights.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        edges: &EdgeSet,
        features: Var,
        fused: Var,
        asset_rows: &[usize],
    ) -> (Var, Vec<(usize, Var)>) {
        let attr = self.edge_attributes(g, store, edges, fused);
        let mut x = features;
        let mut attention = Vec::new();
        for (l, layer) in self.params.layers.iter().enumerate() {
            let (y, alpha) = self.heat_layer(g, store, layer, edges, x, attr);
            attention.push((l, alpha));
            x = y;
        }
        let assets = g.gather_rows(x, Rc::new(asset_rows.to_vec()));
        let z = self.params.out1.forward(g, store, assets);
        let z = g.elu(z);
        (self.params.out2.forward(g, store, z), attention)
    }

    /// Mean of `‖e^n_h + e^r + e^τ − e^n_t‖` over the snapshot's loss
    /// relations; zero when there are none.
    pub fn kge_loss<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, edges: &EdgeSet, fused: Var) -> Var {
        if edges.kge.is_empty() {
            return g.constant_scalar(S::zero());
        }
        let heads = Rc::new(edges.kge.iter().map(|k| k.0).collect::<Vec<_>>());
        let rels = Rc::new(edges.kge.iter().map(|k| k.1).collect::<Vec<_>>());
        let tails = Rc::new(edges.kge.iter().map(|k| k.2).collect::<Vec<_>>());
        let months = Rc::new(edges.kge.iter().map(|k| k.3).collect::<Vec<_>>());
        let days = Rc::new(edges.kge.iter().map(|k| k.4).collect::<Vec<_>>());
        self.translation_loss(g, store, heads, rels, tails, months, days, fused)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn translation_loss<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        heads: Rc<Vec<usize>>,
        rels: Rc<Vec<usize>>,
        tails: Rc<Vec<usize>>,
        months: Rc<Vec<usize>>,
        days: Rc<Vec<usize>>,
        fused: Var,
    ) -> Var {
        let en = g.param(store, self.params.entity_emb);
        let eh = g.gather_rows(en, heads);
        let et = g.gather_rows(en, tails);
        let er = g.gather_rows(fused, rels);
        let tau = self.time_embedding_graph(g, store, months, days);
        let s = g.add(eh, er);
        let s = g.add(s, tau);
        let s = g.sub(s, et);
        let norms = g.row_norm(s);
        g.mean(norms)
    }

    /// Adds attention on edges entering asset nodes to `report`.
    pub fn record_attention<S: Scalar>(
        &self,
        report: &mut AttentionReport,
        edges: &EdgeSet,
        weights: &[(usize, Matrix<S>)],
        assets: &[(usize, String)],
    ) {
        let bucket = edges
            .at
            .map_or_else(|| "static".to_string(), |d| format!("{:04}-{:02}", d.year(), d.month()));
        let m = self.n_relations;
        let names: BTreeMap<usize, &str> = assets.iter().map(|(r, n)| (*r, n.as_str())).collect();
        for (e, (&dst, &kind)) in edges.dst.iter().zip(&edges.kind).enumerate() {
            let Some(asset) = names.get(&dst) else { continue };
            let rel = if kind == 2 * m {
                *report.self_loop_assets.entry(asset.to_string()).or_insert(0) += 1;
                "SELF".to_string()
            } else if kind >= m {
                format!("{}^-1", self.relation_names[kind - m])
            } else {
                self.relation_names[kind].clone()
            };
            for (layer, w) in weights {
                let row = w.row(e);
                let mean = row.iter().map(|v| v.f64()).sum::<f64>() / row.len() as f64;
                let cell = report
                    .cells
                    .entry((asset.to_string(), rel.clone(), bucket.clone(), *layer))
                    .or_insert((0.0, 0));
                cell.0 += mean;
                cell.1 += 1;
            }
        }
    }
}
