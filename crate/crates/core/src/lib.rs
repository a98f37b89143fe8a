//! Demonstration subset selection for in-context learning.
//!
//! A model's output on a prompt φ(S, x) is linearised around a few anchor
//! prompts, so the loss of any candidate subset S can be estimated from
//! precomputed outputs and (randomly projected) input gradients, without
//! running the model again. The crate provides the estimator, the selection
//! algorithms built on it, exact-inference oracles, synthetic tasks and the
//! metrics used to compare them.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix `f64`.

pub mod data;
pub mod embedding;
pub mod error;
pub mod gradest;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod scalar;
pub mod selection;
pub mod tasks;

pub use data::{AnchorPolicy, Dataset, DemoExample, DemoSet, LossKind, PromptSubset, QuerySet, SelectionConfig};
pub use embedding::{EmbeddingLayout, EmbeddingVector, TokenFeatures, DISTANCE_BUCKETS};
pub use error::{GradselError, Result};
pub use scalar::Scalar;

pub type DemoSet64 = DemoSet<f64>;
pub type QuerySet64 = QuerySet<f64>;
pub type Dataset64 = Dataset<f64>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type AffineModel64 = models::AffineModel<f64>;
pub type TwoLayerReLU64 = models::TwoLayerReLU<f64>;
pub type LinearAttention64 = models::LinearAttentionICL<f64>;
pub type AnyModel64 = models::AnyModel<f64>;
pub type AnchorCache64 = gradest::AnchorCache<f64>;
pub type LossEstimate64 = gradest::LossEstimate<f64>;
pub type SelectionResult64 = selection::SelectionResult<f64>;

pub type DemoSet32 = DemoSet<f32>;
pub type QuerySet32 = QuerySet<f32>;
pub type LinearAttention32 = models::LinearAttentionICL<f32>;
