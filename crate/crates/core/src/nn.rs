//! Small building blocks shared by the models.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Affine map `x W + b` on row vectors.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Glorot-uniform weight, zero bias.
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: store.add(format!("{name}.w"), Matrix::glorot(in_dim, out_dim, rng)),
            b: store.add(format!("{name}.b"), Matrix::zeros(1, out_dim)),
            in_dim,
            out_dim,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, b)
    }
}

/// Row-wise layer normalisation with learned gain and bias.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Matrix::filled(1, dim, S::one())),
            bias: store.add(format!("{name}.bias"), Matrix::zeros(1, dim)),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Var {
        let n = g.layer_norm_rows(x, S::of(LAYER_NORM_EPS));
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let scaled = g.mul(n, gain);
        g.add(scaled, bias)
    }
}
