//! A small sequential CNN with named layers and a designated saliency layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels;
use crate::layers::{xavier_uniform, LayerKind, LayerSpec};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// A layer plus its parameters (present for conv and dense layers).
#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

/// Sequential CNN. Construction validates the architecture: unique layer
/// names, a single softmax in final position, logits matching the class
/// count, and a saliency layer that names a conv layer.
#[derive(Debug, Clone)]
pub struct Model {
    layers: Vec<Layer>,
    saliency_layer: String,
    class_count: usize,
    input_shape: (usize, usize, usize),
}

/// Node ids recorded while running a model forward on a tape.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: NodeId,
    /// Output node of every layer, in layer order.
    pub outputs: Vec<NodeId>,
    /// Pre-softmax activations (input of the final softmax layer).
    pub logits: NodeId,
    /// Softmax output.
    pub probs: NodeId,
    /// Output node of the saliency layer.
    pub saliency: NodeId,
    /// Weight/bias leaf ids per layer, for layers that have parameters.
    pub params: Vec<Option<(NodeId, NodeId)>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dims {
    Spatial(usize, usize, usize),
    Flat(usize),
}

impl Model {
    pub fn new(
        specs: Vec<LayerSpec>,
        saliency_layer: &str,
        input_shape: (usize, usize, usize),
        class_count: usize,
        seed: u64,
    ) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::InvalidClassCount { count: class_count });
        }
        if specs.is_empty() {
            return Err(Error::InvalidConfig("model needs at least one layer".into()));
        }
        for (i, s) in specs.iter().enumerate() {
            if specs[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::InvalidConfig(format!("duplicate layer name '{}'", s.name)));
            }
            if !s.frozen && !s.has_params() {
                return Err(Error::InvalidConfig(format!(
                    "layer '{}' has no parameters to unfreeze",
                    s.name
                )));
            }
            let is_softmax = matches!(s.kind, LayerKind::Softmax);
            if is_softmax != (i == specs.len() - 1) {
                return Err(Error::InvalidConfig(
                    "exactly one softmax layer is required, in final position".into(),
                ));
            }
        }
        let saliency_ok = specs
            .iter()
            .any(|s| s.name == saliency_layer && matches!(s.kind, LayerKind::Conv2d { .. }));
        if !saliency_ok {
            return Err(Error::InvalidConfig(format!(
                "saliency layer '{saliency_layer}' does not name a conv layer"
            )));
        }

        // Infer shapes through the stack and validate as we go.
        let mut dims = Dims::Spatial(input_shape.0, input_shape.1, input_shape.2);
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let (weight_shape, bias_shape, next) = Self::infer(&spec, dims)?;
            layers.push(Layer {
                spec,
                weight: weight_shape.map(Tensor::zeros),
                bias: bias_shape.map(Tensor::zeros),
            });
            dims = next;
        }
        match dims {
            Dims::Flat(n) if n == class_count => {}
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "model output does not match {class_count} classes"
                )))
            }
        }

        let mut model = Self {
            layers,
            saliency_layer: saliency_layer.to_string(),
            class_count,
            input_shape,
        };
        model.reinitialize(seed);
        Ok(model)
    }

    fn infer(spec: &LayerSpec, dims: Dims) -> Result<(Option<Vec<usize>>, Option<Vec<usize>>, Dims)> {
        let name = &spec.name;
        let mismatch = |expected: &str, dims: Dims| Error::ShapeMismatch {
            context: name.clone(),
            expected: expected.to_string(),
            actual: format!("{dims:?}"),
        };
        match spec.kind {
            LayerKind::Conv2d { out_channels, kernel, stride, padding } => {
                let Dims::Spatial(c, h, w) = dims else {
                    return Err(mismatch("spatial input [C,H,W]", dims));
                };
                let d = kernels::conv_dims(name, c, h, w, out_channels, kernel.0, kernel.1, stride, padding)?;
                Ok((
                    Some(vec![out_channels, c, kernel.0, kernel.1]),
                    Some(vec![out_channels]),
                    Dims::Spatial(out_channels, d.out_h, d.out_w),
                ))
            }
            LayerKind::Relu => Ok((None, None, dims)),
            LayerKind::MaxPool2 => {
                let Dims::Spatial(c, h, w) = dims else {
                    return Err(mismatch("spatial input [C,H,W]", dims));
                };
                if h < 2 || w < 2 {
                    return Err(mismatch("spatial extents of at least 2x2", dims));
                }
                Ok((None, None, Dims::Spatial(c, h / 2, w / 2)))
            }
            LayerKind::GlobalAvgPool => {
                let Dims::Spatial(c, _, _) = dims else {
                    return Err(mismatch("spatial input [C,H,W]", dims));
                };
                Ok((None, None, Dims::Flat(c)))
            }
            LayerKind::Dense { out_features } => {
                let Dims::Flat(n) = dims else {
                    return Err(mismatch("flat input", dims));
                };
                Ok((Some(vec![out_features, n]), Some(vec![out_features]), Dims::Flat(out_features)))
            }
            LayerKind::Softmax => {
                let Dims::Flat(n) = dims else {
                    return Err(mismatch("flat input", dims));
                };
                if n == 0 {
                    return Err(Error::EmptyLogits);
                }
                Ok((None, None, Dims::Flat(n)))
            }
        }
    }

    /// The reference architecture used throughout: two padded 3x3 conv blocks
    /// with 2x2 pooling, then global average pooling into a dense softmax
    /// head. The second conv layer is the saliency layer and the only
    /// trainable one.
    pub fn small_cnn(class_count: usize, image_size: usize, seed: u64) -> Result<Self> {
        Self::new(
            vec![
                LayerSpec::conv2d("conv1", 8, (3, 3), 1, 1),
                LayerSpec::relu("relu1"),
                LayerSpec::maxpool2("pool1"),
                LayerSpec::conv2d("conv2", 16, (3, 3), 1, 1).unfrozen(),
                LayerSpec::relu("relu2"),
                LayerSpec::maxpool2("pool2"),
                LayerSpec::global_avg_pool("gap"),
                LayerSpec::dense("fc", class_count),
                LayerSpec::softmax("softmax"),
            ],
            "conv2",
            (1, image_size, image_size),
            class_count,
            seed,
        )
    }

    /// Redraws every parameter from the Xavier-uniform scheme (biases reset
    /// to zero) using a single seeded stream consumed in layer order.
    pub fn reinitialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            let Some(weight) = &mut layer.weight else { continue };
            let shape = weight.shape().to_vec();
            let (fan_in, fan_out) = match layer.spec.kind {
                LayerKind::Conv2d { .. } => {
                    // weight is [O, C, KH, KW]
                    (shape[1] * shape[2] * shape[3], shape[0] * shape[2] * shape[3])
                }
                LayerKind::Dense { .. } => (shape[1], shape[0]),
                _ => unreachable!("only conv and dense layers carry weights"),
            };
            let len = weight.len();
            *weight = Tensor::new(shape, xavier_uniform(&mut rng, fan_in, fan_out, len))
                .expect("shape preserved");
            if let Some(bias) = &mut layer.bias {
                *bias = Tensor::zeros(bias.shape().to_vec());
            }
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.spec.name == name)
    }

    pub(crate) fn layer_mut(&mut self, name: &str) -> Option<&mut Layer> {
        self.layers.iter_mut().find(|l| l.spec.name == name)
    }

    pub fn saliency_layer(&self) -> &str {
        &self.saliency_layer
    }

    pub fn saliency_layer_index(&self) -> usize {
        self.layers
            .iter()
            .position(|l| l.spec.name == self.saliency_layer)
            .expect("validated at construction")
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn unfrozen_layers(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| !l.spec.frozen)
            .map(|l| l.spec.name.as_str())
            .collect()
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        let layer = self
            .layer_mut(name)
            .ok_or_else(|| Error::InvalidConfig(format!("no layer named '{name}'")))?;
        if !frozen && !layer.spec.has_params() {
            return Err(Error::InvalidConfig(format!(
                "layer '{name}' has no parameters to unfreeze"
            )));
        }
        layer.spec.frozen = frozen;
        Ok(())
    }

    /// Replaces the parameters of a conv or dense layer; the new tensors must
    /// match the existing shapes exactly.
    pub fn set_params(&mut self, name: &str, weight: Tensor, bias: Tensor) -> Result<()> {
        let layer = self
            .layer_mut(name)
            .ok_or_else(|| Error::InvalidConfig(format!("no layer named '{name}'")))?;
        let (cur_w, cur_b) = match (&layer.weight, &layer.bias) {
            (Some(w), Some(b)) => (w, b),
            _ => {
                return Err(Error::InvalidConfig(format!("layer '{name}' has no parameters")));
            }
        };
        if weight.shape() != cur_w.shape() || bias.shape() != cur_b.shape() {
            return Err(Error::ShapeMismatch {
                context: format!("parameters of layer '{name}'"),
                expected: format!("weight {:?}, bias {:?}", cur_w.shape(), cur_b.shape()),
                actual: format!("weight {:?}, bias {:?}", weight.shape(), bias.shape()),
            });
        }
        layer.weight = Some(weight);
        layer.bias = Some(bias);
        Ok(())
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        let want = [self.input_shape.0, self.input_shape.1, self.input_shape.2];
        if image.shape() != want {
            return Err(Error::ShapeMismatch {
                context: "model input".into(),
                expected: format!("{want:?}"),
                actual: format!("{:?}", image.shape()),
            });
        }
        Ok(())
    }

    /// Records a full forward pass on `tape`. The input leaf requires
    /// gradients (needed by guided backpropagation); parameter leaves require
    /// gradients exactly when their layer is unfrozen.
    pub fn forward_on_tape(&self, tape: &mut Tape, image: &Tensor) -> Result<ForwardTrace> {
        self.check_input(image)?;
        image.debug_check_finite("model input");
        let input = tape.leaf(image.clone().with_requires_grad(true));

        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut params = Vec::with_capacity(self.layers.len());
        let mut logits = input;
        let mut cur = input;
        for layer in &self.layers {
            let trainable = !layer.spec.frozen;
            let mut param_ids = None;
            cur = match layer.spec.kind {
                LayerKind::Conv2d { stride, padding, .. } => {
                    let w = tape.leaf(
                        layer.weight.clone().expect("conv has weights").with_requires_grad(trainable),
                    );
                    let b = tape.leaf(
                        layer.bias.clone().expect("conv has bias").with_requires_grad(trainable),
                    );
                    param_ids = Some((w, b));
                    tape.conv2d(&layer.spec.name, cur, w, b, stride, padding)?
                }
                LayerKind::Relu => tape.relu(cur)?,
                LayerKind::MaxPool2 => tape.maxpool2(&layer.spec.name, cur)?,
                LayerKind::GlobalAvgPool => tape.global_avg_pool(&layer.spec.name, cur)?,
                LayerKind::Dense { .. } => {
                    let w = tape.leaf(
                        layer.weight.clone().expect("dense has weights").with_requires_grad(trainable),
                    );
                    let b = tape.leaf(
                        layer.bias.clone().expect("dense has bias").with_requires_grad(trainable),
                    );
                    param_ids = Some((w, b));
                    tape.dense(&layer.spec.name, cur, w, b)?
                }
                LayerKind::Softmax => {
                    logits = cur;
                    tape.softmax(cur)?
                }
            };
            outputs.push(cur);
            params.push(param_ids);
        }

        let saliency = outputs[self.saliency_layer_index()];
        Ok(ForwardTrace { input, outputs, logits, probs: cur, saliency, params })
    }

    /// Plain forward pass: returns (logits, probabilities).
    pub fn forward(&self, image: &Tensor) -> Result<(Vec<f32>, Vec<f32>)> {
        let mut tape = Tape::new();
        let trace = self.forward_on_tape(&mut tape, image)?;
        Ok((tape.value(trace.logits).to_vec(), tape.value(trace.probs).to_vec()))
    }

    /// Argmax class (first maximal probability on ties).
    pub fn predict(&self, image: &Tensor) -> Result<usize> {
        let (_, probs) = self.forward(image)?;
        let (_, arg) = kernels::argminmax(&probs);
        Ok(arg)
    }

    /// Runs only the layers after `start` (exclusive) on a plain activation,
    /// returning the logits. Used by oracles that perturb intermediate
    /// activations.
    pub fn forward_from_layer(&self, start: usize, activation: &Tensor) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let mut cur = tape.leaf(activation.clone());
        let mut logits = cur;
        for layer in &self.layers[start + 1..] {
            cur = match layer.spec.kind {
                LayerKind::Conv2d { stride, padding, .. } => {
                    let w = tape.leaf(layer.weight.clone().expect("conv has weights"));
                    let b = tape.leaf(layer.bias.clone().expect("conv has bias"));
                    tape.conv2d(&layer.spec.name, cur, w, b, stride, padding)?
                }
                LayerKind::Relu => tape.relu(cur)?,
                LayerKind::MaxPool2 => tape.maxpool2(&layer.spec.name, cur)?,
                LayerKind::GlobalAvgPool => tape.global_avg_pool(&layer.spec.name, cur)?,
                LayerKind::Dense { .. } => {
                    let w = tape.leaf(layer.weight.clone().expect("dense has weights"));
                    let b = tape.leaf(layer.bias.clone().expect("dense has bias"));
                    tape.dense(&layer.spec.name, cur, w, b)?
                }
                LayerKind::Softmax => {
                    logits = cur;
                    tape.softmax(cur)?
                }
            };
        }
        Ok(tape.value(logits).to_vec())
    }
}
