//! Wengert-list reverse-mode autodiff over f32 tensors.
//!
//! Every forward operation appends one immutable node; `backward` walks the
//! list in reverse without mutating it, so repeated or partial backward
//! passes over the same tape are cheap and always agree.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims};
use crate::tensor::Tensor;

pub type NodeId = usize;

/// How ReLU routes gradients during a backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReluRule {
    /// Pass where the forward input was positive.
    Standard,
    /// Guided backpropagation: pass where the forward input was positive and
    /// the incoming gradient is positive.
    Guided,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { requires_grad: bool },
    Conv2d { input: NodeId, weight: NodeId, bias: NodeId, dims: ConvDims },
    Relu { input: NodeId },
    MaxPool2 { input: NodeId, switches: Vec<usize> },
    GlobalAvgPool { input: NodeId, ch: usize, h: usize, w: usize },
    Dense { input: NodeId, weight: NodeId, bias: NodeId },
    Softmax { input: NodeId },
    Index { input: NodeId, index: usize },
    WeightedChannelSum { input: NodeId, weights: Vec<f32> },
    UpsampleNearest { input: NodeId, src_h: usize, src_w: usize },
    MulConst { input: NodeId, factor: Vec<f32> },
    Affine { input: NodeId, scale: f32 },
    Log { input: NodeId },
    ClampMin { input: NodeId, floor: f32 },
    ClampMax { input: NodeId, ceiling: f32 },
    Add { lhs: NodeId, rhs: NodeId },
    Sub { lhs: NodeId, rhs: NodeId },
    Mul { lhs: NodeId, rhs: NodeId },
    SumAll { input: NodeId },
    MeanAll { input: NodeId },
    MinAll { input: NodeId, arg: usize },
    MaxAll { input: NodeId, arg: usize },
    SubBroadcast { input: NodeId, scalar: NodeId },
    MulBroadcast { input: NodeId, scalar: NodeId },
    Recip { input: NodeId },
    BceMean { input: NodeId, target: Vec<f32> },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f32>,
    op: Op,
}

/// A recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, id: NodeId) -> &[f32] {
        &self.nodes[id].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn tensor(&self, id: NodeId) -> Tensor {
        Tensor::new(self.nodes[id].shape.clone(), self.nodes[id].data.clone())
            .expect("node shapes are consistent by construction")
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f32>, op: Op) -> NodeId {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by {op:?}"
        );
        self.nodes.push(Node { shape, data, op });
        self.nodes.len() - 1
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::NodeNotOnTape { id });
        }
        Ok(())
    }

    // ---- leaves -----------------------------------------------------------

    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        let requires_grad = tensor.requires_grad();
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            Op::Leaf { requires_grad },
        )
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor) -> NodeId {
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            Op::Leaf { requires_grad: false },
        )
    }

    // ---- layer ops --------------------------------------------------------

    pub fn conv2d(
        &mut self,
        context: &str,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        self.check(input)?;
        self.check(weight)?;
        self.check(bias)?;
        let ishape = self.nodes[input].shape.clone();
        let wshape = self.nodes[weight].shape.clone();
        if ishape.len() != 3 || wshape.len() != 4 {
            return Err(Error::ShapeMismatch {
                context: context.to_string(),
                expected: "input [C,H,W] and weight [O,C,KH,KW]".into(),
                actual: format!("input {ishape:?}, weight {wshape:?}"),
            });
        }
        if ishape[0] != wshape[1] {
            return Err(Error::ShapeMismatch {
                context: context.to_string(),
                expected: format!("{} input channels", wshape[1]),
                actual: format!("{}", ishape[0]),
            });
        }
        if self.nodes[bias].data.len() != wshape[0] {
            return Err(Error::ShapeMismatch {
                context: context.to_string(),
                expected: format!("bias of {} elements", wshape[0]),
                actual: format!("{}", self.nodes[bias].data.len()),
            });
        }
        let dims = kernels::conv_dims(
            context, ishape[0], ishape[1], ishape[2], wshape[0], wshape[2], wshape[3], stride,
            padding,
        )?;
        let mut out = vec![0.0; dims.out_ch * dims.out_h * dims.out_w];
        kernels::conv_forward(
            &dims,
            &self.nodes[input].data,
            &self.nodes[weight].data,
            &self.nodes[bias].data,
            &mut out,
        );
        Ok(self.push(
            vec![dims.out_ch, dims.out_h, dims.out_w],
            out,
            Op::Conv2d { input, weight, bias, dims },
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let mut out = vec![0.0; self.nodes[input].data.len()];
        kernels::relu_forward(&self.nodes[input].data, &mut out);
        Ok(self.push(self.nodes[input].shape.clone(), out, Op::Relu { input }))
    }

    pub fn maxpool2(&mut self, context: &str, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let shape = self.nodes[input].shape.clone();
        if shape.len() != 3 || shape[1] < 2 || shape[2] < 2 {
            return Err(Error::ShapeMismatch {
                context: context.to_string(),
                expected: "[C,H,W] with H,W >= 2".into(),
                actual: format!("{shape:?}"),
            });
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let mut out = vec![0.0; c * (h / 2) * (w / 2)];
        let mut switches = Vec::new();
        kernels::maxpool2_forward(c, h, w, &self.nodes[input].data, &mut out, &mut switches);
        Ok(self.push(vec![c, h / 2, w / 2], out, Op::MaxPool2 { input, switches }))
    }

    pub fn global_avg_pool(&mut self, context: &str, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let shape = self.nodes[input].shape.clone();
        if shape.len() != 3 {
            return Err(Error::ShapeMismatch {
                context: context.to_string(),
                expected: "[C,H,W]".into(),
                actual: format!("{shape:?}"),
            });
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let mut out = vec![0.0; c];
        kernels::gap_forward(c, h, w, &self.nodes[input].data, &mut out);
        Ok(self.push(vec![c], out, Op::GlobalAvgPool { input, ch: c, h, w }))
    }

    pub fn dense(
        &mut self,
        context: &str,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId> {
        self.check(input)?;
        self.check(weight)?;
        self.check(bias)?;
        let ishape = self.nodes[input].shape.clone();
        let wshape = self.nodes[weight].shape.clone();
        if ishape.len() != 1 || wshape.len() != 2 || wshape[1] != ishape[0] {
            return Err(Error::ShapeMismatch {
                context: context.to_string(),
                expected: format!("input [{}]", wshape.get(1).copied().unwrap_or(0)),
                actual: format!("input {ishape:?}, weight {wshape:?}"),
            });
        }
        if self.nodes[bias].data.len() != wshape[0] {
            return Err(Error::ShapeMismatch {
                context: context.to_string(),
                expected: format!("bias of {} elements", wshape[0]),
                actual: format!("{}", self.nodes[bias].data.len()),
            });
        }
        let mut out = vec![0.0; wshape[0]];
        kernels::dense_forward(
            ishape[0],
            wshape[0],
            &self.nodes[input].data,
            &self.nodes[weight].data,
            &self.nodes[bias].data,
            &mut out,
        );
        Ok(self.push(vec![wshape[0]], out, Op::Dense { input, weight, bias }))
    }

    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        if self.nodes[input].data.is_empty() {
            return Err(Error::EmptyLogits);
        }
        let mut out = vec![0.0; self.nodes[input].data.len()];
        kernels::softmax_forward(&self.nodes[input].data, &mut out);
        Ok(self.push(self.nodes[input].shape.clone(), out, Op::Softmax { input }))
    }

    // ---- scalar and elementwise ops ----------------------------------------

    pub fn index(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        self.check(input)?;
        let len = self.nodes[input].data.len();
        if index >= len {
            return Err(Error::ClassOutOfRange { class: index, count: len });
        }
        let v = self.nodes[input].data[index];
        Ok(self.push(vec![1], vec![v], Op::Index { input, index }))
    }

    pub fn weighted_channel_sum(&mut self, input: NodeId, weights: Vec<f32>) -> Result<NodeId> {
        self.check(input)?;
        let shape = self.nodes[input].shape.clone();
        if shape.len() != 3 || shape[0] != weights.len() {
            return Err(Error::ShapeMismatch {
                context: "weighted channel sum".into(),
                expected: format!("[K,H,W] with K = {}", weights.len()),
                actual: format!("{shape:?}"),
            });
        }
        let hw = shape[1] * shape[2];
        let mut out = vec![0.0; hw];
        kernels::weighted_channel_sum_forward(shape[0], hw, &self.nodes[input].data, &weights, &mut out);
        Ok(self.push(
            vec![shape[1], shape[2]],
            out,
            Op::WeightedChannelSum { input, weights },
        ))
    }

    pub fn upsample_nearest(&mut self, input: NodeId, th: usize, tw: usize) -> Result<NodeId> {
        self.check(input)?;
        let shape = self.nodes[input].shape.clone();
        if shape.len() != 2 || th < shape[0] || tw < shape[1] || th == 0 || tw == 0 {
            return Err(Error::ShapeMismatch {
                context: "upsample".into(),
                expected: format!("2-d map no larger than {th}x{tw}"),
                actual: format!("{shape:?}"),
            });
        }
        let mut out = vec![0.0; th * tw];
        kernels::upsample_nearest_forward(shape[0], shape[1], th, tw, &self.nodes[input].data, &mut out);
        Ok(self.push(
            vec![th, tw],
            out,
            Op::UpsampleNearest { input, src_h: shape[0], src_w: shape[1] },
        ))
    }

    /// Elementwise product with a constant (non-differentiated) factor.
    pub fn mul_const(&mut self, input: NodeId, factor: Vec<f32>) -> Result<NodeId> {
        self.check(input)?;
        if factor.len() != self.nodes[input].data.len() {
            return Err(Error::ShapeMismatch {
                context: "mul_const".into(),
                expected: format!("factor of {} elements", self.nodes[input].data.len()),
                actual: format!("{}", factor.len()),
            });
        }
        let out: Vec<f32> = self.nodes[input]
            .data
            .iter()
            .zip(factor.iter())
            .map(|(a, b)| a * b)
            .collect();
        Ok(self.push(self.nodes[input].shape.clone(), out, Op::MulConst { input, factor }))
    }

    pub fn affine(&mut self, input: NodeId, scale: f32, shift: f32) -> Result<NodeId> {
        self.check(input)?;
        let out: Vec<f32> = self.nodes[input].data.iter().map(|v| scale * v + shift).collect();
        Ok(self.push(self.nodes[input].shape.clone(), out, Op::Affine { input, scale }))
    }

    pub fn log(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let out: Vec<f32> = self.nodes[input].data.iter().map(|v| v.ln()).collect();
        Ok(self.push(self.nodes[input].shape.clone(), out, Op::Log { input }))
    }

    pub fn clamp_min(&mut self, input: NodeId, floor: f32) -> Result<NodeId> {
        self.check(input)?;
        let out: Vec<f32> = self.nodes[input].data.iter().map(|v| v.max(floor)).collect();
        Ok(self.push(self.nodes[input].shape.clone(), out, Op::ClampMin { input, floor }))
    }

    pub fn clamp_max(&mut self, input: NodeId, ceiling: f32) -> Result<NodeId> {
        self.check(input)?;
        let out: Vec<f32> = self.nodes[input].data.iter().map(|v| v.min(ceiling)).collect();
        Ok(self.push(self.nodes[input].shape.clone(), out, Op::ClampMax { input, ceiling }))
    }

    fn binary_shapes(&self, context: &str, lhs: NodeId, rhs: NodeId) -> Result<()> {
        self.check(lhs)?;
        self.check(rhs)?;
        if self.nodes[lhs].shape != self.nodes[rhs].shape {
            return Err(Error::ShapeMismatch {
                context: context.to_string(),
                expected: format!("{:?}", self.nodes[lhs].shape),
                actual: format!("{:?}", self.nodes[rhs].shape),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        self.binary_shapes("add", lhs, rhs)?;
        let out: Vec<f32> = self.nodes[lhs]
            .data
            .iter()
            .zip(self.nodes[rhs].data.iter())
            .map(|(a, b)| a + b)
            .collect();
        Ok(self.push(self.nodes[lhs].shape.clone(), out, Op::Add { lhs, rhs }))
    }

    pub fn sub(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        self.binary_shapes("sub", lhs, rhs)?;
        let out: Vec<f32> = self.nodes[lhs]
            .data
            .iter()
            .zip(self.nodes[rhs].data.iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(self.push(self.nodes[lhs].shape.clone(), out, Op::Sub { lhs, rhs }))
    }

    pub fn mul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        self.binary_shapes("mul", lhs, rhs)?;
        let out: Vec<f32> = self.nodes[lhs]
            .data
            .iter()
            .zip(self.nodes[rhs].data.iter())
            .map(|(a, b)| a * b)
            .collect();
        Ok(self.push(self.nodes[lhs].shape.clone(), out, Op::Mul { lhs, rhs }))
    }

    pub fn sum_all(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let s: f32 = self.nodes[input].data.iter().sum();
        Ok(self.push(vec![1], vec![s], Op::SumAll { input }))
    }

    pub fn mean_all(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let n = self.nodes[input].data.len();
        if n == 0 {
            return Err(Error::EmptyLogits);
        }
        let s: f32 = self.nodes[input].data.iter().sum();
        Ok(self.push(vec![1], vec![s / n as f32], Op::MeanAll { input }))
    }

    /// Minimum over all elements; the subgradient is routed to the first
    /// minimal element in row-major order.
    pub fn min_all(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        if self.nodes[input].data.is_empty() {
            return Err(Error::EmptyLogits);
        }
        let (arg, _) = kernels::argminmax(&self.nodes[input].data);
        let v = self.nodes[input].data[arg];
        Ok(self.push(vec![1], vec![v], Op::MinAll { input, arg }))
    }

    pub fn max_all(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        if self.nodes[input].data.is_empty() {
            return Err(Error::EmptyLogits);
        }
        let (_, arg) = kernels::argminmax(&self.nodes[input].data);
        let v = self.nodes[input].data[arg];
        Ok(self.push(vec![1], vec![v], Op::MaxAll { input, arg }))
    }

    fn check_scalar(&self, id: NodeId) -> Result<()> {
        self.check(id)?;
        if self.nodes[id].data.len() != 1 {
            return Err(Error::SeedNotScalar { len: self.nodes[id].data.len() });
        }
        Ok(())
    }

    /// input - scalar, broadcast over every element.
    pub fn sub_broadcast(&mut self, input: NodeId, scalar: NodeId) -> Result<NodeId> {
        self.check(input)?;
        self.check_scalar(scalar)?;
        let s = self.nodes[scalar].data[0];
        let out: Vec<f32> = self.nodes[input].data.iter().map(|v| v - s).collect();
        Ok(self.push(self.nodes[input].shape.clone(), out, Op::SubBroadcast { input, scalar }))
    }

    /// input * scalar, broadcast over every element.
    pub fn mul_broadcast(&mut self, input: NodeId, scalar: NodeId) -> Result<NodeId> {
        self.check(input)?;
        self.check_scalar(scalar)?;
        let s = self.nodes[scalar].data[0];
        let out: Vec<f32> = self.nodes[input].data.iter().map(|v| v * s).collect();
        Ok(self.push(self.nodes[input].shape.clone(), out, Op::MulBroadcast { input, scalar }))
    }

    /// Reciprocal of a scalar node.
    pub fn recip(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_scalar(input)?;
        let v = self.nodes[input].data[0];
        Ok(self.push(vec![1], vec![1.0 / v], Op::Recip { input }))
    }

    /// Mean binary cross entropy of `input` (probabilities) against a
    /// constant 0/1 target, with probabilities clamped to
    /// [1e-12, 1 - 1e-12] before the logs.
    pub fn bce_mean(&mut self, input: NodeId, target: Vec<f32>) -> Result<NodeId> {
        self.check(input)?;
        let n = self.nodes[input].data.len();
        if n == 0 {
            return Err(Error::EmptyLogits);
        }
        if target.len() != n {
            return Err(Error::ShapeMismatch {
                context: "bce target".into(),
                expected: format!("{n} elements"),
                actual: format!("{}", target.len()),
            });
        }
        let mut acc = 0.0f64;
        for (p, t) in self.nodes[input].data.iter().zip(target.iter()) {
            // The clamp must run in f64: f32 rounds 1 - 1e-12 back to 1.0,
            // which would let an exact hit produce 0 * ln(0) = NaN.
            let p = f64::from(*p).clamp(f64::from(BCE_EPS), 1.0 - f64::from(BCE_EPS));
            let t = f64::from(*t);
            acc -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
        let v = (acc / n as f64) as f32;
        Ok(self.push(vec![1], vec![v], Op::BceMean { input, target }))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse-mode gradients of a scalar `seed` node with respect to `wrt`.
    ///
    /// `create_graph` is reserved for a future second-order mode and must be
    /// false. Leaves with `requires_grad = false` receive no accumulation and
    /// report zero gradients.
    pub fn backward(&self, seed: NodeId, wrt: &[NodeId], create_graph: bool) -> Result<Vec<Tensor>> {
        if create_graph {
            return Err(Error::SecondOrderUnsupported);
        }
        self.backprop(seed, wrt, ReluRule::Standard)
    }

    /// Like `backward` but replaces every ReLU's backward rule with the
    /// guided-backpropagation imputed rule. The result is a saliency signal,
    /// not a true gradient.
    pub fn backward_guided(&self, seed: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        self.backprop(seed, wrt, ReluRule::Guided)
    }

    fn op_inputs(op: &Op) -> [Option<NodeId>; 3] {
        match *op {
            Op::Leaf { .. } => [None, None, None],
            Op::Conv2d { input, weight, bias, .. } | Op::Dense { input, weight, bias } => {
                [Some(input), Some(weight), Some(bias)]
            }
            Op::Relu { input }
            | Op::MaxPool2 { input, .. }
            | Op::GlobalAvgPool { input, .. }
            | Op::Softmax { input }
            | Op::Index { input, .. }
            | Op::WeightedChannelSum { input, .. }
            | Op::UpsampleNearest { input, .. }
            | Op::MulConst { input, .. }
            | Op::Affine { input, .. }
            | Op::Log { input }
            | Op::ClampMin { input, .. }
            | Op::ClampMax { input, .. }
            | Op::SumAll { input }
            | Op::MeanAll { input }
            | Op::MinAll { input, .. }
            | Op::MaxAll { input, .. }
            | Op::Recip { input }
            | Op::BceMean { input, .. } => [Some(input), None, None],
            Op::Add { lhs, rhs } | Op::Sub { lhs, rhs } | Op::Mul { lhs, rhs } => {
                [Some(lhs), Some(rhs), None]
            }
            Op::SubBroadcast { input, scalar } | Op::MulBroadcast { input, scalar } => {
                [Some(input), Some(scalar), None]
            }
        }
    }

    fn backprop(&self, seed: NodeId, wrt: &[NodeId], rule: ReluRule) -> Result<Vec<Tensor>> {
        self.check(seed)?;
        for &id in wrt {
            self.check(id)?;
        }
        if self.nodes[seed].data.len() != 1 {
            return Err(Error::SeedNotScalar { len: self.nodes[seed].data.len() });
        }

        // A node's adjoint matters only if gradient flowing through it can
        // reach a requested leaf; frozen leaves are excluded so they never
        // accumulate anything.
        let mut relevant = vec![false; self.nodes.len()];
        for &id in wrt {
            let eligible = match self.nodes[id].op {
                Op::Leaf { requires_grad } => requires_grad,
                _ => true,
            };
            if eligible {
                relevant[id] = true;
            }
        }
        for id in 0..self.nodes.len() {
            if relevant[id] {
                continue;
            }
            relevant[id] = Self::op_inputs(&self.nodes[id].op)
                .into_iter()
                .flatten()
                .any(|i| relevant[i]);
        }

        let mut adj: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        if relevant[seed] {
            adj[seed] = Some(vec![1.0]);
        }

        for id in (0..=seed).rev() {
            if !relevant[id] || adj[id].is_none() {
                continue;
            }
            let g = adj[id].clone().expect("checked above");
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            self.propagate(id, &g, &mut adj, &relevant, rule);
        }

        Ok(wrt
            .iter()
            .map(|&id| {
                let data = adj[id]
                    .clone()
                    .unwrap_or_else(|| vec![0.0; self.nodes[id].data.len()]);
                Tensor::new(self.nodes[id].shape.clone(), data)
                    .expect("adjoint shapes mirror node shapes")
            })
            .collect())
    }

    fn propagate(
        &self,
        id: NodeId,
        g: &[f32],
        adj: &mut [Option<Vec<f32>>],
        relevant: &[bool],
        rule: ReluRule,
    ) {
        let mut acc = |target: NodeId, f: &mut dyn FnMut(&mut [f32])| {
            if !relevant[target] {
                return;
            }
            let buf = adj[target].get_or_insert_with(|| vec![0.0; self.nodes[target].data.len()]);
            f(buf);
        };

        match &self.nodes[id].op {
            Op::Leaf { .. } => {}
            Op::Conv2d { input, weight, bias, dims } => {
                acc(*input, &mut |buf| {
                    kernels::conv_backward_input(dims, &self.nodes[*weight].data, g, buf)
                });
                acc(*weight, &mut |buf| {
                    kernels::conv_backward_weight(dims, &self.nodes[*input].data, g, buf)
                });
                acc(*bias, &mut |buf| kernels::conv_backward_bias(dims, g, buf));
            }
            Op::Relu { input } => {
                let x = &self.nodes[*input].data;
                acc(*input, &mut |buf| match rule {
                    ReluRule::Standard => kernels::relu_backward(x, g, buf),
                    ReluRule::Guided => kernels::relu_backward_guided(x, g, buf),
                });
            }
            Op::MaxPool2 { input, switches } => {
                acc(*input, &mut |buf| kernels::maxpool2_backward(switches, g, buf));
            }
            Op::GlobalAvgPool { input, ch, h, w } => {
                acc(*input, &mut |buf| kernels::gap_backward(*ch, *h, *w, g, buf));
            }
            Op::Dense { input, weight, bias } => {
                let in_f = self.nodes[*input].data.len();
                let out_f = self.nodes[id].data.len();
                acc(*input, &mut |buf| {
                    kernels::dense_backward_input(in_f, out_f, &self.nodes[*weight].data, g, buf)
                });
                acc(*weight, &mut |buf| {
                    kernels::dense_backward_weight(in_f, out_f, &self.nodes[*input].data, g, buf)
                });
                acc(*bias, &mut |buf| kernels::dense_backward_bias(out_f, g, buf));
            }
            Op::Softmax { input } => {
                acc(*input, &mut |buf| {
                    kernels::softmax_backward(&self.nodes[id].data, g, buf)
                });
            }
            Op::Index { input, index } => {
                acc(*input, &mut |buf| buf[*index] += g[0]);
            }
            Op::WeightedChannelSum { input, weights } => {
                let hw = self.nodes[id].data.len();
                acc(*input, &mut |buf| {
                    kernels::weighted_channel_sum_backward(weights.len(), hw, weights, g, buf)
                });
            }
            Op::UpsampleNearest { input, src_h, src_w } => {
                let th = self.nodes[id].shape[0];
                let tw = self.nodes[id].shape[1];
                acc(*input, &mut |buf| {
                    kernels::upsample_nearest_backward(*src_h, *src_w, th, tw, g, buf)
                });
            }
            Op::MulConst { input, factor } => {
                acc(*input, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * factor[i];
                    }
                });
            }
            Op::Affine { input, scale, .. } => {
                acc(*input, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * scale;
                    }
                });
            }
            Op::Log { input } => {
                let x = &self.nodes[*input].data;
                acc(*input, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] / x[i];
                    }
                });
            }
            Op::ClampMin { input, floor } => {
                let x = &self.nodes[*input].data;
                acc(*input, &mut |buf| {
                    for i in 0..buf.len() {
                        if x[i] > *floor {
                            buf[i] += g[i];
                        }
                    }
                });
            }
            Op::ClampMax { input, ceiling } => {
                let x = &self.nodes[*input].data;
                acc(*input, &mut |buf| {
                    for i in 0..buf.len() {
                        if x[i] < *ceiling {
                            buf[i] += g[i];
                        }
                    }
                });
            }
            Op::Add { lhs, rhs } => {
                acc(*lhs, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i];
                    }
                });
                acc(*rhs, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i];
                    }
                });
            }
            Op::Sub { lhs, rhs } => {
                acc(*lhs, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i];
                    }
                });
                acc(*rhs, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] -= g[i];
                    }
                });
            }
            Op::Mul { lhs, rhs } => {
                let a = &self.nodes[*lhs].data;
                let b = &self.nodes[*rhs].data;
                acc(*lhs, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * b[i];
                    }
                });
                acc(*rhs, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * a[i];
                    }
                });
            }
            Op::SumAll { input } => {
                acc(*input, &mut |buf| {
                    for v in buf.iter_mut() {
                        *v += g[0];
                    }
                });
            }
            Op::MeanAll { input } => {
                let n = self.nodes[*input].data.len() as f32;
                acc(*input, &mut |buf| {
                    for v in buf.iter_mut() {
                        *v += g[0] / n;
                    }
                });
            }
            Op::MinAll { input, arg } | Op::MaxAll { input, arg } => {
                acc(*input, &mut |buf| buf[*arg] += g[0]);
            }
            Op::SubBroadcast { input, scalar } => {
                acc(*input, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i];
                    }
                });
                let total: f32 = g.iter().sum();
                acc(*scalar, &mut |buf| buf[0] -= total);
            }
            Op::MulBroadcast { input, scalar } => {
                let s = self.nodes[*scalar].data[0];
                let x = &self.nodes[*input].data;
                acc(*input, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * s;
                    }
                });
                let dot: f32 = g.iter().zip(x.iter()).map(|(gi, xi)| gi * xi).sum();
                acc(*scalar, &mut |buf| buf[0] += dot);
            }
            Op::Recip { input } => {
                let x = self.nodes[*input].data[0];
                acc(*input, &mut |buf| buf[0] -= g[0] / (x * x));
            }
            Op::BceMean { input, target } => {
                let n = self.nodes[*input].data.len() as f32;
                let p = &self.nodes[*input].data;
                acc(*input, &mut |buf| {
                    for i in 0..buf.len() {
                        // zero subgradient in the clamped regions (f64 bounds,
                        // matching the forward clamp)
                        let pi = f64::from(p[i]);
                        if pi > f64::from(BCE_EPS) && pi < 1.0 - f64::from(BCE_EPS) {
                            buf[i] += g[0] / n * (-target[i] / p[i] + (1.0 - target[i]) / (1.0 - p[i]));
                        }
                    }
                });
            }
        }
    }
}

/// Probability clamp used by the pixel-wise cross entropy.
pub const BCE_EPS: f32 = 1e-12;
