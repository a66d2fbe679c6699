//! Sequential encoder: maps a `W x 5` price window to a `d_s` embedding.
//!
//! The transformer variant projects each day to `d_s`, adds a fixed
//! sinusoidal position table, runs post-norm encoder layers (multi-head
//! self-attention and a GELU feed-forward block, each with a residual and
//! layer norm) and pools over days. The recurrent variant is a single LSTM
//! whose final hidden state is the embedding.
//!
//! Batches are processed as one stacked `(N*W) x 5` matrix; attention runs
//! block-diagonally so assets never attend to each other.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::market::N_FEATURES;
use crate::nn::{LayerNorm, Linear};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Last,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqKind {
    #[default]
    Transformer,
    Lstm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeqEncoderConfig {
    pub kind: SeqKind,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width; `0` means `2 * d_model`.
    pub ff_dim: usize,
    pub pooling: Pooling,
}

impl Default for SeqEncoderConfig {
    fn default() -> Self {
        Self {
            kind: SeqKind::Transformer,
            d_model: 20,
            layers: 2,
            heads: 2,
            ff_dim: 0,
            pooling: Pooling::Mean,
        }
    }
}

impl SeqEncoderConfig {
    pub fn ff_width(&self) -> usize {
        if self.ff_dim == 0 {
            2 * self.d_model
        } else {
            self.ff_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 {
            return Err(Error::Config("sequential embedding size must be positive".into()));
        }
        if self.kind == SeqKind::Transformer && (self.heads == 0 || self.d_model % self.heads != 0) {
            return Err(Error::Config(format!(
                "embedding size {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
}

#[derive(Clone, Debug)]
struct LstmCell {
    /// `5 x 4d`, gate order input, forget, cell, output.
    wx: ParamId,
    /// `d x 4d`.
    wh: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
enum Body {
    Transformer { input: Linear, layers: Vec<EncoderLayer> },
    Lstm(LstmCell),
}

#[derive(Clone, Debug)]
pub struct SeqEncoder {
    config: SeqEncoderConfig,
    body: Body,
}

/// Fixed sinusoidal table, `len x d`.
pub fn positional_encoding<S: Scalar>(len: usize, d: usize) -> Matrix<S> {
    let mut pe = Matrix::zeros(len, d);
    for pos in 0..len {
        for i in 0..d {
            let freq = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / freq;
            pe[(pos, i)] = S::of(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

impl SeqEncoder {
    /// Registers parameters under `prefix`.
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        config: SeqEncoderConfig,
        store: &mut ParamStore<S>,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let body = match config.kind {
            SeqKind::Transformer => {
                let input = Linear::new(store, &format!("{prefix}.input"), N_FEATURES, d, rng);
                let layers = (0..config.layers)
                    .map(|l| {
                        let p = format!("{prefix}.layer{l}");
                        EncoderLayer {
                            q: Linear::new(store, &format!("{p}.q"), d, d, rng),
                            k: Linear::new(store, &format!("{p}.k"), d, d, rng),
                            v: Linear::new(store, &format!("{p}.v"), d, d, rng),
                            o: Linear::new(store, &format!("{p}.o"), d, d, rng),
                            norm1: LayerNorm::new(store, &format!("{p}.norm1"), d),
                            ff1: Linear::new(store, &format!("{p}.ff1"), d, config.ff_width(), rng),
                            ff2: Linear::new(store, &format!("{p}.ff2"), config.ff_width(), d, rng),
                            norm2: LayerNorm::new(store, &format!("{p}.norm2"), d),
                        }
                    })
                    .collect();
                Body::Transformer { input, layers }
            }
            SeqKind::Lstm => {
                let mut b = Matrix::zeros(1, 4 * d);
                // forget-gate bias 1
                for c in d..2 * d {
                    b[(0, c)] = S::one();
                }
                Body::Lstm(LstmCell {
                    wx: store.add(format!("{prefix}.lstm.wx"), Matrix::glorot(N_FEATURES, 4 * d, rng)),
                    wh: store.add(format!("{prefix}.lstm.wh"), Matrix::glorot(d, 4 * d, rng)),
                    b: store.add(format!("{prefix}.lstm.b"), b),
                })
            }
        };
        Ok(Self { config, body })
    }

    pub fn config(&self) -> &SeqEncoderConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.d_model
    }

    /// Encodes `windows` (all `W x 5`, same `W`) into an `N x d_s` node.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, windows: &[&Matrix<S>]) -> Var {
        assert!(!windows.is_empty(), "empty window batch");
        let w = windows[0].rows();
        let n = windows.len();
        let mut data = Vec::with_capacity(n * w * N_FEATURES);
        for win in windows {
            assert_eq!(win.shape(), (w, N_FEATURES), "window shape mismatch");
            data.extend_from_slice(win.as_slice());
        }
        let x = g.constant(Matrix::from_vec(n * w, N_FEATURES, data));
        match &self.body {
            Body::Transformer { input, layers } => self.transformer(g, store, x, n, w, input, layers),
            Body::Lstm(cell) => self.lstm(g, store, x, n, w, cell),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn transformer<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
        n: usize,
        w: usize,
        input: &Linear,
        layers: &[EncoderLayer],
    ) -> Var {
        let d = self.config.d_model;
        let pe_one = positional_encoding::<S>(w, d);
        let mut pe = Matrix::zeros(n * w, d);
        for a in 0..n {
            for p in 0..w {
                pe.row_mut(a * w + p).copy_from_slice(pe_one.row(p));
            }
        }
        let pe = g.constant(pe);
        let proj = input.forward(g, store, x);
        let mut h = g.add(proj, pe);

        let heads = self.config.heads;
        let dh = d / heads;
        let inv_sqrt = S::one() / S::of_usize(dh).sqrt();
        for layer in layers {
            let q = layer.q.forward(g, store, h);
            let k = layer.k.forward(g, store, h);
            let v = layer.v.forward(g, store, h);
            let mut outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = g.slice_cols(q, hd * dh, dh);
                let kh = g.slice_cols(k, hd * dh, dh);
                let vh = g.slice_cols(v, hd * dh, dh);
                let scores = g.block_matmul_t(qh, kh, w);
                let scores = g.scale(scores, inv_sqrt);
                let attn = g.softmax_rows(scores);
                outs.push(g.block_matmul(attn, vh, w));
            }
            let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
            let attn_out = layer.o.forward(g, store, cat);
            let res = g.add(h, attn_out);
            h = layer.norm1.forward(g, store, res);
            let f = layer.ff1.forward(g, store, h);
            let f = g.gelu(f);
            let f = layer.ff2.forward(g, store, f);
            let res = g.add(h, f);
            h = layer.norm2.forward(g, store, res);
        }
        match self.config.pooling {
            Pooling::Mean => {
                let index: Vec<usize> = (0..n * w).map(|r| r / w).collect();
                let sums = g.index_add_rows(h, Rc::new(index), n);
                g.scale(sums, S::one() / S::of_usize(w))
            }
            Pooling::Last => {
                let index: Vec<usize> = (0..n).map(|a| a * w + w - 1).collect();
                g.gather_rows(h, Rc::new(index))
            }
        }
    }

    fn lstm<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
        n: usize,
        w: usize,
        cell: &LstmCell,
    ) -> Var {
        let d = self.config.d_model;
        let wx = g.param(store, cell.wx);
        let wh = g.param(store, cell.wh);
        let b = g.param(store, cell.b);
        // inputs projected for all steps at once
        let xw = g.matmul(x, wx);
        let mut h = g.constant(Matrix::zeros(n, d));
        let mut c = g.constant(Matrix::zeros(n, d));
        for t in 0..w {
            let rows: Vec<usize> = (0..n).map(|a| a * w + t).collect();
            let xt = g.gather_rows(xw, Rc::new(rows));
            let hw = g.matmul(h, wh);
            let z = g.add(xt, hw);
            let z = g.add(z, b);
            let zi = g.slice_cols(z, 0, d);
            let zf = g.slice_cols(z, d, d);
            let zg = g.slice_cols(z, 2 * d, d);
            let zo = g.slice_cols(z, 3 * d, d);
            let i = g.sigmoid(zi);
            let f = g.sigmoid(zf);
            let cand = g.tanh(zg);
            let o = g.sigmoid(zo);
            let keep = g.mul(f, c);
            let write = g.mul(i, cand);
            c = g.add(keep, write);
            let tc = g.tanh(c);
            h = g.mul(o, tc);
        }
        h
    }

    /// Embedding of one window; rejects non-finite input.
    pub fn encode<S: Scalar>(&self, store: &ParamStore<S>, window: &Matrix<S>) -> Result<Vec<S>> {
        Ok(self.encode_batch(store, &[window])?.row(0).to_vec())
    }

    /// `N x d_s` embeddings, one row per window.
    pub fn encode_batch<S: Scalar>(&self, store: &ParamStore<S>, windows: &[&Matrix<S>]) -> Result<Matrix<S>> {
        if windows.is_empty() {
            return Ok(Matrix::zeros(0, self.config.d_model));
        }
        if let Some(i) = windows.iter().position(|w| !w.all_finite()) {
            return Err(Error::Numeric(format!("window {i} has non-finite values")));
        }
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, windows);
        Ok(g.value(out).clone())
    }
}
