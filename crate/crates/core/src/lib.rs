//! Learning binary hash functions by directly optimizing a binary
//! autoencoder: a step-function linear encoder and an affine decoder are
//! trained by alternating parameter fits with per-point binary code
//! optimization under an increasing quadratic penalty. Includes thresholded
//! PCA and iterative-quantization baselines, Hamming retrieval evaluation,
//! and a code-utilization entropy measure.

pub mod baselines;
pub mod codes;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod split;
pub mod steps;
pub mod svm;
pub mod synth;
pub mod trainer;
pub mod zstep;

pub use codes::BinaryCodeMatrix;
pub use error::{Error, Result};
pub use features::FeatureMatrix;
pub use model::{HashModel, LinearDecoder, LinearEncoder};
pub use svm::SvmConfig;
