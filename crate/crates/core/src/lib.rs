//! Listwise passage re-ranking with templated ranking features and global
//! attention across the `[CLS]` states of a candidate set, plus the BM25
//! retrieval, training, evaluation, fusion and analysis pieces around it.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision.

pub mod analysis;
pub mod error;
pub mod fusion;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod retrieval;
pub mod scalar;
pub mod synthgen;
pub mod tensor;
pub mod textproc;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Gradients, Tape, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type Reranker32 = model::Reranker<f32>;
pub type Reranker64 = model::Reranker<f64>;
pub type ParamStore32 = model::ParamStore<f32>;
pub type ParamStore64 = model::ParamStore<f64>;
