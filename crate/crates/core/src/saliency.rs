//! Grad-CAM, guided backpropagation and Guided Grad-CAM.

use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::kernels;
use crate::model::Model;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Saliency maps move Raw -> Normalized; confidence and mask metrics require
/// a normalized map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapState {
    Raw,
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaliencyMethod {
    GradCam,
    GuidedBackprop,
    GuidedGradCam,
}

impl SaliencyMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SaliencyMethod::GradCam => "gradcam",
            SaliencyMethod::GuidedBackprop => "guided-backprop",
            SaliencyMethod::GuidedGradCam => "guided-gradcam",
        }
    }
}

impl std::str::FromStr for SaliencyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gradcam" => Ok(SaliencyMethod::GradCam),
            "guided-backprop" => Ok(SaliencyMethod::GuidedBackprop),
            "guided-gradcam" => Ok(SaliencyMethod::GuidedGradCam),
            other => Err(Error::UnknownMethod { name: other.to_string() }),
        }
    }
}

/// A single-channel saliency map tied to the class and layer it explains.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    values: Vec<f32>,
    height: usize,
    width: usize,
    class_index: usize,
    layer: String,
    state: MapState,
    method: SaliencyMethod,
}

impl SaliencyMap {
    pub fn new(
        values: Vec<f32>,
        height: usize,
        width: usize,
        class_index: usize,
        layer: &str,
        state: MapState,
        method: SaliencyMethod,
    ) -> Result<Self> {
        if values.len() != height * width || values.is_empty() {
            return Err(Error::ShapeMismatch {
                context: "saliency map".into(),
                expected: format!("{height}x{width} values"),
                actual: format!("{}", values.len()),
            });
        }
        Ok(Self { values, height, width, class_index, layer: layer.to_string(), state, method })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn class_index(&self) -> usize {
        self.class_index
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn state(&self) -> MapState {
        self.state
    }

    pub fn method(&self) -> SaliencyMethod {
        self.method
    }

    /// 8-bit quantization for PGM export; requires a normalized map.
    pub fn to_pgm_pixels(&self) -> Result<Vec<u8>> {
        if self.state != MapState::Normalized {
            return Err(Error::MapNotNormalized);
        }
        Ok(self
            .values
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect())
    }
}

/// Channel weights alpha_k: the spatial mean of d y_c / d A_k per channel.
pub fn grad_cam_weights(activations: &Tensor, grads: &Tensor) -> Result<Vec<f32>> {
    if activations.shape() != grads.shape() || activations.rank() != 3 {
        return Err(Error::ShapeMismatch {
            context: "grad_cam_weights".into(),
            expected: format!("matching [K,H,W], activations {:?}", activations.shape()),
            actual: format!("{:?}", grads.shape()),
        });
    }
    let k = activations.shape()[0];
    let mut alpha = vec![0.0; k];
    kernels::gap_forward(k, activations.shape()[1], activations.shape()[2], grads.data(), &mut alpha);
    Ok(alpha)
}

/// ReLU of the alpha-weighted channel sum of the activations, at the
/// activation resolution.
pub fn grad_cam_map(
    activations: &Tensor,
    weights: &[f32],
    class_index: usize,
    layer: &str,
) -> Result<SaliencyMap> {
    if activations.rank() != 3 || activations.shape()[0] != weights.len() {
        return Err(Error::ShapeMismatch {
            context: "grad_cam_map".into(),
            expected: format!("[K,H,W] with K = {}", weights.len()),
            actual: format!("{:?}", activations.shape()),
        });
    }
    let (k, h, w) = (activations.shape()[0], activations.shape()[1], activations.shape()[2]);
    let mut sum = vec![0.0; h * w];
    kernels::weighted_channel_sum_forward(k, h * w, activations.data(), weights, &mut sum);
    let mut vals = vec![0.0; h * w];
    kernels::relu_forward(&sum, &mut vals);
    SaliencyMap::new(vals, h, w, class_index, layer, MapState::Raw, SaliencyMethod::GradCam)
}

/// Grad-CAM for one example at the model's saliency layer, raw, at the
/// saliency layer's spatial resolution. The inner gradient seeds from the
/// pre-softmax logit of `class_index`.
pub fn grad_cam(model: &Model, example: &LabeledExample, class_index: usize) -> Result<SaliencyMap> {
    let mut tape = Tape::new();
    let trace = model.forward_on_tape(&mut tape, &example.image)?;
    let y = tape.index(trace.logits, class_index)?;
    let grads = tape.backward(y, &[trace.saliency], false)?;
    let acts = tape.tensor(trace.saliency);
    let alpha = grad_cam_weights(&acts, &grads[0])?;
    grad_cam_map(&acts, &alpha, class_index, model.saliency_layer())
}

/// Guided backpropagation: the modified backward pass from the class logit to
/// the input, reduced to one channel by the per-pixel maximum absolute value.
pub fn guided_backprop(
    model: &Model,
    example: &LabeledExample,
    class_index: usize,
) -> Result<SaliencyMap> {
    let mut tape = Tape::new();
    let trace = model.forward_on_tape(&mut tape, &example.image)?;
    let y = tape.index(trace.logits, class_index)?;
    let grads = tape.backward_guided(y, &[trace.input])?;
    let (c, h, w) = model.input_shape();
    let vals = reduce_input_channels(c, h, w, grads[0].data());
    SaliencyMap::new(
        vals, h, w, class_index, "input", MapState::Raw, SaliencyMethod::GuidedBackprop,
    )
}

/// Collapses a [C,H,W] input gradient to one channel by the per-pixel maximum
/// absolute value.
pub(crate) fn reduce_input_channels(c: usize, h: usize, w: usize, data: &[f32]) -> Vec<f32> {
    let mut vals = vec![0.0f32; h * w];
    for px in 0..h * w {
        for ch in 0..c {
            vals[px] = vals[px].max(data[ch * h * w + px].abs());
        }
    }
    vals
}

/// Upsamples the Grad-CAM map to the guided map's resolution (nearest
/// neighbour) and multiplies elementwise.
pub fn guided_grad_cam(cam: &SaliencyMap, guided: &SaliencyMap) -> Result<SaliencyMap> {
    if cam.class_index != guided.class_index {
        return Err(Error::InvalidConfig(format!(
            "class mismatch: grad-cam explains class {}, guided map class {}",
            cam.class_index, guided.class_index
        )));
    }
    let up = upsample(cam, guided.height, guided.width)?;
    let vals: Vec<f32> = up
        .values
        .iter()
        .zip(guided.values.iter())
        .map(|(a, b)| a * b)
        .collect();
    SaliencyMap::new(
        vals,
        guided.height,
        guided.width,
        cam.class_index,
        &cam.layer,
        MapState::Raw,
        SaliencyMethod::GuidedGradCam,
    )
}

/// Nearest-neighbour upsampling; the state tag is preserved because nearest
/// neighbour only copies values.
pub fn upsample(map: &SaliencyMap, height: usize, width: usize) -> Result<SaliencyMap> {
    if height < map.height || width < map.width {
        return Err(Error::ShapeMismatch {
            context: "upsample".into(),
            expected: format!("target at least {}x{}", map.height, map.width),
            actual: format!("{height}x{width}"),
        });
    }
    let mut vals = vec![0.0; height * width];
    kernels::upsample_nearest_forward(map.height, map.width, height, width, &map.values, &mut vals);
    SaliencyMap::new(vals, height, width, map.class_index, &map.layer, map.state, map.method)
}

/// Min-max normalization to [0, 1]; a constant map normalizes to all zeros.
/// Idempotent on already-normalized maps.
pub fn normalize_map(map: &SaliencyMap) -> Result<SaliencyMap> {
    let (mn_idx, mx_idx) = kernels::argminmax(&map.values);
    let (mn, mx) = (map.values[mn_idx], map.values[mx_idx]);
    let vals: Vec<f32> = if mx == mn {
        vec![0.0; map.values.len()]
    } else {
        map.values.iter().map(|v| (v - mn) / (mx - mn)).collect()
    };
    SaliencyMap::new(
        vals,
        map.height,
        map.width,
        map.class_index,
        &map.layer,
        MapState::Normalized,
        map.method,
    )
}

/// The full per-example pipeline: a raw map at input resolution for any of
/// the three methods.
pub fn compute_saliency(
    model: &Model,
    example: &LabeledExample,
    class_index: usize,
    method: SaliencyMethod,
) -> Result<SaliencyMap> {
    let (_, h, w) = model.input_shape();
    match method {
        SaliencyMethod::GradCam => {
            let cam = grad_cam(model, example, class_index)?;
            upsample(&cam, h, w)
        }
        SaliencyMethod::GuidedBackprop => guided_backprop(model, example, class_index),
        SaliencyMethod::GuidedGradCam => {
            let cam = grad_cam(model, example, class_index)?;
            let gb = guided_backprop(model, example, class_index)?;
            guided_grad_cam(&cam, &gb)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerSpec;

    fn tensor3(k: usize, h: usize, w: usize, data: Vec<f32>) -> Tensor {
        Tensor::new(vec![k, h, w], data).unwrap()
    }

    #[test]
    fn weights_are_spatial_means() {
        let acts = tensor3(2, 2, 2, vec![0.0; 8]);
        // channel 0 gradient all 0.5, channel 1 all -1
        let grads = tensor3(2, 2, 2, vec![0.5, 0.5, 0.5, 0.5, -1.0, -1.0, -1.0, -1.0]);
        assert_eq!(grad_cam_weights(&acts, &grads).unwrap(), vec![0.5, -1.0]);

        let zeros = tensor3(2, 2, 2, vec![0.0; 8]);
        assert_eq!(grad_cam_weights(&acts, &zeros).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn weights_reject_shape_mismatch() {
        let acts = tensor3(2, 2, 2, vec![0.0; 8]);
        let grads = tensor3(1, 2, 2, vec![0.0; 4]);
        assert!(grad_cam_weights(&acts, &grads).is_err());
    }

    #[test]
    fn map_matches_hand_computation() {
        // A1 = [[1,0],[0,1]], A2 = [[0,2],[2,0]], alpha = [0.5, -1]
        let acts = tensor3(2, 2, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        let map = grad_cam_map(&acts, &[0.5, -1.0], 0, "conv").unwrap();
        assert_eq!(map.values(), &[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(map.state(), MapState::Raw);
    }

    #[test]
    fn negative_weights_blank_the_map() {
        let acts = tensor3(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let map = grad_cam_map(&acts, &[-1.0], 0, "conv").unwrap();
        assert_eq!(map.values(), &[0.0; 4]);
    }

    #[test]
    fn single_channel_unit_weight_is_relu_of_activations() {
        let acts = tensor3(1, 2, 2, vec![1.0, -2.0, 3.0, -4.0]);
        let map = grad_cam_map(&acts, &[1.0], 0, "conv").unwrap();
        assert_eq!(map.values(), &[1.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn normalize_examples() {
        let m = SaliencyMap::new(
            vec![0.0, 2.0, 4.0, 8.0], 2, 2, 0, "conv", MapState::Raw, SaliencyMethod::GradCam,
        )
        .unwrap();
        let n = normalize_map(&m).unwrap();
        assert_eq!(n.values(), &[0.0, 0.25, 0.5, 1.0]);
        assert_eq!(n.state(), MapState::Normalized);

        // constant map normalizes to zeros
        let c = SaliencyMap::new(
            vec![3.0; 4], 2, 2, 0, "conv", MapState::Raw, SaliencyMethod::GradCam,
        )
        .unwrap();
        assert_eq!(normalize_map(&c).unwrap().values(), &[0.0; 4]);

        // idempotent
        let nn = normalize_map(&n).unwrap();
        assert_eq!(nn.values(), n.values());
    }

    #[test]
    fn pgm_pixels_require_normalized() {
        let m = SaliencyMap::new(
            vec![0.0, 1.0, 2.0, 3.0], 2, 2, 0, "conv", MapState::Raw, SaliencyMethod::GradCam,
        )
        .unwrap();
        assert!(matches!(m.to_pgm_pixels(), Err(Error::MapNotNormalized)));
        let px = normalize_map(&m).unwrap().to_pgm_pixels().unwrap();
        assert_eq!(px, vec![0, 85, 170, 255]);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("gradcam".parse::<SaliencyMethod>().unwrap(), SaliencyMethod::GradCam);
        assert_eq!(
            "guided-gradcam".parse::<SaliencyMethod>().unwrap(),
            SaliencyMethod::GuidedGradCam
        );
        assert!(matches!(
            "sobel".parse::<SaliencyMethod>(),
            Err(Error::UnknownMethod { .. })
        ));
    }

    fn micro_example(h: usize, w: usize, data: Vec<f32>) -> LabeledExample {
        LabeledExample {
            id: 0,
            image: Tensor::new(vec![1, h, w], data).unwrap(),
            label: 0,
            mask: None,
        }
    }

    fn relu_free_model() -> Model {
        Model::new(
            vec![
                LayerSpec::conv2d("c", 2, (2, 2), 1, 0),
                LayerSpec::global_avg_pool("g"),
                LayerSpec::dense("d", 2),
                LayerSpec::softmax("s"),
            ],
            "c",
            (1, 4, 4),
            2,
            3,
        )
        .unwrap()
    }

    #[test]
    fn guided_equals_plain_gradient_without_relu() {
        let model = relu_free_model();
        let ex = micro_example(4, 4, (0..16).map(|i| (i as f32) / 8.0 - 1.0).collect());

        let guided = guided_backprop(&model, &ex, 1).unwrap();

        let mut tape = Tape::new();
        let trace = model.forward_on_tape(&mut tape, &ex.image).unwrap();
        let y = tape.index(trace.logits, 1).unwrap();
        let plain = tape.backward(y, &[trace.input], false).unwrap();
        let expected: Vec<f32> = plain[0].data().iter().map(|v| v.abs()).collect();
        assert_eq!(guided.values(), expected.as_slice());
    }

    #[test]
    fn all_negative_relu_input_gives_zero_map() {
        // identity 1x1 conv feeding a ReLU: negative inputs gate everything
        let model = Model::new(
            vec![
                LayerSpec::conv2d("c", 1, (1, 1), 1, 0),
                LayerSpec::relu("r"),
                LayerSpec::global_avg_pool("g"),
                LayerSpec::dense("d", 2),
                LayerSpec::softmax("s"),
            ],
            "c",
            (1, 2, 2),
            2,
            1,
        )
        .unwrap();
        let mut model = model;
        let c = model.layer_mut("c").unwrap();
        c.weight = Some(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let ex = micro_example(2, 2, vec![-1.0, -2.0, -0.5, -3.0]);
        let map = guided_backprop(&model, &ex, 0).unwrap();
        assert_eq!(map.values(), &[0.0; 4]);
    }

    #[test]
    fn guided_grad_cam_zero_annihilates_and_ones_identity() {
        let guided = SaliencyMap::new(
            vec![0.1, 0.2, 0.3, 0.4], 2, 2, 0, "input", MapState::Raw,
            SaliencyMethod::GuidedBackprop,
        )
        .unwrap();
        let zero_cam = SaliencyMap::new(
            vec![0.0], 1, 1, 0, "conv", MapState::Raw, SaliencyMethod::GradCam,
        )
        .unwrap();
        let prod = guided_grad_cam(&zero_cam, &guided).unwrap();
        assert_eq!(prod.values(), &[0.0; 4]);

        let one_cam = SaliencyMap::new(
            vec![1.0], 1, 1, 0, "conv", MapState::Raw, SaliencyMethod::GradCam,
        )
        .unwrap();
        let prod = guided_grad_cam(&one_cam, &guided).unwrap();
        assert_eq!(prod.values(), guided.values());
        assert_eq!(prod.method(), SaliencyMethod::GuidedGradCam);
    }

    #[test]
    fn guided_grad_cam_hand_product() {
        let cam = SaliencyMap::new(
            vec![2.0, 0.0, 1.0, 3.0], 2, 2, 1, "conv", MapState::Raw, SaliencyMethod::GradCam,
        )
        .unwrap();
        let guided = SaliencyMap::new(
            vec![0.5, 0.5, 1.0, 1.0, 0.0, 2.0, 2.0, 0.0, 1.0, 1.0, 1.0, 1.0, 3.0, 0.0, 0.0, 3.0],
            4, 4, 1, "input", MapState::Raw, SaliencyMethod::GuidedBackprop,
        )
        .unwrap();
        let prod = guided_grad_cam(&cam, &guided).unwrap();
        // upsampled cam: [[2,2,0,0],[2,2,0,0],[1,1,3,3],[1,1,3,3]]
        let expected = [
            1.0, 1.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 1.0, 1.0, 3.0, 3.0, 3.0, 0.0, 0.0, 9.0,
        ];
        assert_eq!(prod.values(), &expected);
    }

    #[test]
    fn upsample_refuses_downscale() {
        let m = SaliencyMap::new(
            vec![1.0; 16], 4, 4, 0, "conv", MapState::Raw, SaliencyMethod::GradCam,
        )
        .unwrap();
        assert!(upsample(&m, 2, 2).is_err());
    }

    #[test]
    fn grad_cam_maps_are_nonnegative_for_random_models() {
        for seed in 0..20 {
            let model = Model::small_cnn(3, 16, seed).unwrap();
            let n = 16 * 16;
            let data: Vec<f32> = (0..n)
                .map(|i| ((i * 37 + seed as usize * 101) % 255) as f32 / 255.0)
                .collect();
            let ex = micro_example(16, 16, data);
            for class in 0..3 {
                let map = grad_cam(&model, &ex, class).unwrap();
                assert!(map.values().iter().all(|&v| v >= 0.0));
            }
        }
    }
}
