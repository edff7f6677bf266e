//! Saliency-aware CNN training.
//!
//! The crate trains small convolutional classifiers with a loss that mixes
//! normalized cross-entropy with a confidence score read off the model's own
//! saliency map (Grad-CAM or Guided Grad-CAM), plus two interaction penalties
//! that tie the two together. Everything runs on an in-crate reverse-mode
//! autodiff tape; no external ML framework is involved.
//!
//! Module map:
//! - [`tensor`], [`kernels`]: dense NCHW tensors and the conv/pool/dense math.
//! - [`tape`]: the Wengert-list autodiff tape and its operator set.
//! - [`layers`], [`model`]: layer specs and the composed classifier.
//! - [`saliency`]: Grad-CAM, guided backpropagation, Guided Grad-CAM.
//! - [`loss`]: normalized CE, saliency confidence, interaction penalties.
//! - [`metrics`]: SSIM, classification metrics, the four-case taxonomy.
//! - [`trainer`]: SGD with layer freezing, evaluation, transfer, grid search.
//! - [`data`]: the seeded synthetic shapes dataset and the IDX loader.
//! - [`checkpoint`]: the TCN1 binary checkpoint format.
//! - [`report`]: CSV and aligned-table emitters.
//! - [`experiments`]: the consolidated baseline-versus-trustworthy suite.
//! - [`parallel`]: data-parallel execution with a sequential fallback.
//! - [`gradcheck`]: central-difference gradient verification helpers.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod report;
pub mod saliency;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use data::{gen_shapes, LabeledExample, ShapeClass, ShapesConfig};
pub use error::{Error, Result};
pub use experiments::{reproduce, ReproduceOptions, ReproduceSummary};
pub use loss::{AblationMode, CeNormalization, LossBreakdown, LossConfig, LossKind};
pub use metrics::{CaseLabel, MetricsReport};
pub use model::Model;
pub use parallel::ExecMode;
pub use saliency::{MapState, SaliencyMap, SaliencyMethod};
pub use tensor::Tensor;
pub use trainer::TrainConfig;
