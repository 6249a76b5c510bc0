//! Histopathology image classification from fused HOG and deep features.
//!
//! The crate covers corpus handling and augmentation ([`corpus`]), additive
//! Gaussian noise at a target SNR ([`noise`]), HOG descriptors ([`hog`]),
//! frozen-network features through ONNX ([`deepfeat`]), five classical
//! classifiers ([`classify`]), Gaussian-process Bayesian optimization
//! ([`tune`]), metrics and reports ([`metrics`]) and the experiment driver
//! ([`pipeline`]).

pub mod classify;
pub mod corpus;
pub mod deepfeat;
pub mod error;
pub mod features;
pub mod hog;
pub mod matrix;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod seed;
pub mod tensor;
pub mod tune;

pub use classify::{Hyperparams, ModelKind, TrainedModel};
pub use corpus::{ClassLabel, Dataset, DatasetSplit, Sample, SplitRatios};
pub use deepfeat::{BackendHandle, Standardizer};
pub use error::{Error, Result};
pub use features::{FeatureKind, FeatureMatrix, FeatureVector};
pub use hog::HogConfig;
pub use noise::NoiseConfig;
pub use pipeline::{ExperimentConfig, RunDir};
pub use metrics::EvalReport;
pub use tensor::ImageTensor;
pub use tune::{HyperparamSpace, TrialHistory};
