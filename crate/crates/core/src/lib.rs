//! Unsupervised fraud detection: contrastive representation learning on
//! augmented views of tabular transactions, cosine-similarity anomaly
//! scoring, classical baselines and evaluation metrics.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases at the bottom fix the double-precision instantiation used by the
//! command-line tool.

pub mod augment;
pub mod baselines;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod scoring;
pub mod seed;

pub use error::{Error, ErrorKind, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

/// N×D standardized features in double precision.
pub type FeatureMatrix = Matrix<f64>;
/// N×E encoder outputs in double precision.
pub type EmbeddingMatrix = Matrix<f64>;
pub type Encoder = contrastive::EncoderModel<f64>;
pub type Standardizer = data::StandardizationParams<f64>;
pub type KMeans = baselines::KMeansModel<f64>;
pub type IsolationForest = baselines::IsolationForestModel<f64>;
pub type Autoencoder = baselines::AutoencoderModel<f64>;
pub type Baseline = baselines::BaselineModel<f64>;
