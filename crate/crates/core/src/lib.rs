//! Sentiment and emotion classification for informal Indonesian e-commerce
//! reviews.
//!
//! Two tracks share one preprocessing pipeline: sparse n-gram features with
//! linear classifiers ([`linear`]), and dual-head neural encoders trained
//! with a small reverse-mode autodiff engine ([`neural`], [`training`]).
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to
//! `f32` for training and inference and `f64` for gradient checks.

pub mod autodiff;
pub mod corpus;
pub mod linear;
pub mod metrics;
pub mod neural;
pub mod scalar;
pub mod textprep;
pub mod training;
pub mod vectorize;

pub use scalar::Scalar;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Model32 = neural::Model<f32>;
pub type Model64 = neural::Model<f64>;
pub type LinearModel32 = linear::LinearModel<f32>;
pub type LinearModel64 = linear::LinearModel<f64>;
pub type SparseVector32 = vectorize::SparseVector<f32>;
pub type SparseVector64 = vectorize::SparseVector<f64>;
