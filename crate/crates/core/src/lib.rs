//! Stock ranking over a temporal knowledge graph.
//!
//! Numeric building blocks are generic over [`Scalar`] (`f32` or `f64`); the
//! end-to-end pipeline runs in `f64`.

pub mod autodiff;
pub mod backtest;
pub mod config;
pub mod error;
pub mod hawkes;
pub mod kg;
pub mod market;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod ranker;
pub mod relational;
pub mod scalar;
pub mod seq_encoder;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = tensor::Matrix<f64>;
pub type Matrix32 = tensor::Matrix<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type ParamStore64 = params::ParamStore<f64>;
pub type ParamStore32 = params::ParamStore<f32>;
pub type HawkesInputs64 = ranker::HawkesInputs<f64>;
