//! Dynamic graph embeddings from structural and temporal self-attention,
//! with an offline teacher distilled into a compact online student.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the bottom of this file name the two concrete instantiations.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type ParamStore32 = params::ParamStore<f32>;
pub type ParamStore64 = params::ParamStore<f64>;
pub type AttentionModel32 = model::AttentionModel<f32>;
pub type AttentionModel64 = model::AttentionModel<f64>;
pub type NodeEmbeddings32 = model::NodeEmbeddings<f32>;
pub type NodeEmbeddings64 = model::NodeEmbeddings<f64>;
pub type Teacher32 = train::Teacher<f32>;
pub type Teacher64 = train::Teacher<f64>;
