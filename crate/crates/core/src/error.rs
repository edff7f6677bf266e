//! Error type shared across the crate.

use crate::loss::LossBreakdown;

/// Everything that can go wrong in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{context}: expected shape {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    InvalidTensor { len: usize, shape: Vec<usize> },

    #[error("softmax requires a non-empty input")]
    EmptyLogits,

    #[error("backward seed must be a scalar node, got {len} elements")]
    SeedNotScalar { len: usize },

    #[error("node id {id} is not on this tape")]
    NodeNotOnTape { id: usize },

    #[error("gradient check requires a scalar output, got {len} elements")]
    NonScalarOutput { len: usize },

    #[error("create_graph=true is reserved for a second-order mode that is not implemented")]
    SecondOrderUnsupported,

    #[error("class index {class} out of range for {count} classes")]
    ClassOutOfRange { class: usize, count: usize },

    #[error("saliency map must be normalized for this operation")]
    MapNotNormalized,

    #[error("{name} = {value} is outside [0, 1]")]
    UnitInterval { name: &'static str, value: f64 },

    #[error("class count must be at least 2, got {count}")]
    InvalidClassCount { count: usize },

    #[error("sample has no mask but the operation requires one")]
    MaskMissing,

    #[error("mask selects no pixels")]
    EmptyMask,

    #[error("model has no unfrozen layer to train")]
    NoUnfrozenLayer,

    #[error("gradient supplied for frozen layer '{layer}'")]
    FrozenParameterGradient { layer: String },

    #[error("model has no conv layer")]
    NoConvLayer,

    #[error("non-finite loss at step {step}; last finite breakdown: {last}")]
    NanAbort { step: usize, last: LossBreakdown },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("could not place shape after {attempts} attempts")]
    ShapePlacement { attempts: usize },

    #[error("dynamic range must be positive, got {value}")]
    DynamicRange { value: f64 },

    #[error("unknown saliency method '{name}' (expected gradcam, guided-backprop or guided-gradcam)")]
    UnknownMethod { name: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("idx magic mismatch: expected {expected:#010x}, got {actual:#010x}")]
    IdxBadMagic { expected: u32, actual: u32 },

    #[error("idx file truncated: needed {needed} bytes, {available} available")]
    IdxTruncated { needed: usize, available: usize },

    #[error("idx image count {images} does not match label count {labels}")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("pgm parse error: {0}")]
    PgmFormat(String),

    #[error("checkpoint magic mismatch (not a TCN1 file)")]
    CheckpointBadMagic,

    #[error("checkpoint crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CheckpointCrc { stored: u32, computed: u32 },

    #[error("checkpoint layer '{layer}': expected shape {expected}, got {actual}")]
    CheckpointLayerShape {
        layer: String,
        expected: String,
        actual: String,
    },

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
