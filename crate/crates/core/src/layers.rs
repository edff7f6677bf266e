//! Layer descriptions and parameter initialization.

use rand::Rng;

/// The fixed layer vocabulary of the small CNNs used here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d {
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2,
    GlobalAvgPool,
    Dense {
        out_features: usize,
    },
    Softmax,
}

/// One layer of a model: a unique name, its kind, and whether its parameters
/// are frozen during training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub frozen: bool,
}

impl LayerSpec {
    pub fn conv2d(
        name: &str,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Conv2d { out_channels, kernel, stride, padding },
            frozen: true,
        }
    }

    pub fn relu(name: &str) -> Self {
        Self { name: name.to_string(), kind: LayerKind::Relu, frozen: true }
    }

    pub fn maxpool2(name: &str) -> Self {
        Self { name: name.to_string(), kind: LayerKind::MaxPool2, frozen: true }
    }

    pub fn global_avg_pool(name: &str) -> Self {
        Self { name: name.to_string(), kind: LayerKind::GlobalAvgPool, frozen: true }
    }

    pub fn dense(name: &str, out_features: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Dense { out_features },
            frozen: true,
        }
    }

    pub fn softmax(name: &str) -> Self {
        Self { name: name.to_string(), kind: LayerKind::Softmax, frozen: true }
    }

    /// Marks this layer as trainable.
    pub fn unfrozen(mut self) -> Self {
        self.frozen = false;
        self
    }

    pub fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Conv2d { .. } | LayerKind::Dense { .. })
    }
}

/// Xavier/Glorot uniform samples: U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
pub(crate) fn xavier_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, len: usize) -> Vec<f32> {
    let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}
