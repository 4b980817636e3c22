//! Confidence-weighted moment matching for zero-shot pseudo-feature
//! generation.
//!
//! The crate provides a small dense engine ([`tensor`]), Gaussian-mixture MMD
//! losses with a per-sample confidence-weighted variant ([`kernel`]), a
//! moment-matching feature generator ([`generator`]), a per-pixel linear
//! classifier ([`classifier`]), the recursive pseudo-label training loop
//! ([`trainer`]), a synthetic segmentation benchmark ([`synthbench`]),
//! segmentation metrics ([`metrics`]) and the experiment runner ([`cli`]).
//!
//! Numerical types are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix them to `f64`, which the training pipeline uses throughout.

pub mod classifier;
pub mod cli;
pub mod error;
pub mod generator;
pub mod kernel;
pub mod loss;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod synthbench;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = tensor::Matrix<f64>;
pub type Mlp = tensor::Mlp<f64>;
pub type Gradients = tensor::Gradients<f64>;
pub type OptimizerState = tensor::OptimizerState<f64>;
pub type FeatureSet = kernel::FeatureSet<f64>;
pub type WeightedFeatureSet = kernel::WeightedFeatureSet<f64>;
pub type ClassEmbedding = generator::ClassEmbedding<f64>;
pub type GeneratorModel = generator::GeneratorModel<f64>;
pub type PixelClassifier = classifier::PixelClassifier<f64>;
pub type Prediction = classifier::Prediction<f64>;

pub type MatrixF32 = tensor::Matrix<f32>;
pub type GeneratorModelF32 = generator::GeneratorModel<f32>;
pub type PixelClassifierF32 = classifier::PixelClassifier<f32>;
