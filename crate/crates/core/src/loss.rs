//! The trustworthy loss: normalized cross entropy coupled to saliency
//! confidence through two interaction penalties.
//!
//! Per sample, with ce* the clamped normalized cross entropy and S the mean
//! of the normalized saliency map:
//!
//!   total = lambda * ce* + (1 - lambda) * S + R1 + R2
//!   R1 = ce* * (1 - S)      R2 = S * (1 - ce*)
//!
//! The channel weights of the inner Grad-CAM pass (and the guided factor of
//! Guided Grad-CAM) are treated as constants: the loss differentiates through
//! the activations but not through the inner gradient, keeping everything
//! first order.

use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::kernels;
use crate::model::{ForwardTrace, Model};
use crate::parallel::{self, ExecMode};
use crate::saliency::{self, SaliencyMap, MapState, SaliencyMethod};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Probability floor shared by the cross-entropy clamps.
pub const PROB_EPS: f32 = 1e-12;

/// How the raw cross entropy is scaled into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CeNormalization {
    /// Divide by the class count (the default).
    #[default]
    DivideByClassCount,
    /// Divide by ln(class count), the analytically tight bound at a uniform
    /// prediction.
    DivideByLogClassCount,
}

impl CeNormalization {
    pub fn as_str(&self) -> &'static str {
        match self {
            CeNormalization::DivideByClassCount => "classcount",
            CeNormalization::DivideByLogClassCount => "logclasscount",
        }
    }
}

impl std::str::FromStr for CeNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "classcount" => Ok(CeNormalization::DivideByClassCount),
            "logclasscount" => Ok(CeNormalization::DivideByLogClassCount),
            other => Err(Error::InvalidConfig(format!(
                "unknown ce normalization '{other}' (expected classcount or logclasscount)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    CrossEntropyOnly,
    #[default]
    Trustworthy,
    /// Trustworthy loss with the pixel-wise cross entropy against the object
    /// mask in place of the saliency confidence.
    TrustworthyPwce,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::CrossEntropyOnly => "ce",
            LossKind::Trustworthy => "trustworthy",
            LossKind::TrustworthyPwce => "trustworthy-pwce",
        }
    }

    pub fn uses_saliency(&self) -> bool {
        !matches!(self, LossKind::CrossEntropyOnly)
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ce" => Ok(LossKind::CrossEntropyOnly),
            "trustworthy" => Ok(LossKind::Trustworthy),
            "trustworthy-pwce" => Ok(LossKind::TrustworthyPwce),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss '{other}' (expected ce, trustworthy or trustworthy-pwce)"
            ))),
        }
    }
}

/// Ablations switch individual interaction penalties off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AblationMode {
    #[default]
    Full,
    R1Zero,
    R2Zero,
}

impl AblationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::R1Zero => "r1zero",
            AblationMode::R2Zero => "r2zero",
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(AblationMode::Full),
            "r1zero" => Ok(AblationMode::R1Zero),
            "r2zero" => Ok(AblationMode::R2Zero),
            other => Err(Error::InvalidConfig(format!(
                "unknown ablation '{other}' (expected full, r1zero or r2zero)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Saliency method driving the confidence term; guided backpropagation is
    /// not class-discriminative and is rejected for training.
    pub method: SaliencyMethod,
    pub lambda: f32,
    pub ce_norm: CeNormalization,
    pub r1_enabled: bool,
    pub r2_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Trustworthy,
            method: SaliencyMethod::GradCam,
            lambda: 0.9,
            ce_norm: CeNormalization::DivideByClassCount,
            r1_enabled: true,
            r2_enabled: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::UnitInterval { name: "lambda", value: f64::from(self.lambda) });
        }
        if self.kind.uses_saliency() && self.method == SaliencyMethod::GuidedBackprop {
            return Err(Error::InvalidConfig(
                "guided-backprop is not class-discriminative; train with gradcam or guided-gradcam"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Applies an ablation; modes compose (R1Zero then R2Zero disables both).
    pub fn with_ablation(mut self, mode: AblationMode) -> Self {
        match mode {
            AblationMode::Full => {}
            AblationMode::R1Zero => self.r1_enabled = false,
            AblationMode::R2Zero => self.r2_enabled = false,
        }
        self
    }
}

/// Batch-mean loss terms, accumulated in f64 from the per-sample f32 values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub s_hat: f64,
    pub r1: f64,
    pub r2: f64,
    pub total: f64,
    pub lambda: f64,
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "total={:.6} ce={:.6} s_hat={:.6} r1={:.6} r2={:.6} lambda={:.4}",
            self.total, self.ce, self.s_hat, self.r1, self.r2, self.lambda
        )
    }
}

/// Per-sample loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLoss {
    pub ce: f32,
    pub s_hat: f32,
    pub r1: f32,
    pub r2: f32,
    pub total: f32,
}

/// Gradients for one layer's parameters.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub layer: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Batch result: mean breakdown, per-sample terms, and mean gradients for the
/// unfrozen layer.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub breakdown: LossBreakdown,
    pub samples: Vec<SampleLoss>,
    pub grads: Vec<LayerGrads>,
}

// ---- plain value operations --------------------------------------------------

/// -ln(p_true) with the probability clamped below at 1e-12.
pub fn per_sample_ce(probs: &[f32], true_class: usize) -> Result<f32> {
    if true_class >= probs.len() {
        return Err(Error::ClassOutOfRange { class: true_class, count: probs.len() });
    }
    Ok(-probs[true_class].max(PROB_EPS).ln())
}

/// Scales a raw cross entropy into [0, 1] and clamps at 1.
pub fn normalize_ce(ce: f32, class_count: usize, mode: CeNormalization) -> Result<f32> {
    if class_count < 2 {
        return Err(Error::InvalidClassCount { count: class_count });
    }
    if ce < 0.0 {
        return Err(Error::InvalidConfig(format!("cross entropy must be non-negative, got {ce}")));
    }
    let denom = match mode {
        CeNormalization::DivideByClassCount => class_count as f32,
        CeNormalization::DivideByLogClassCount => (class_count as f32).ln(),
    };
    Ok((ce / denom).min(1.0))
}

/// Mean of a normalized saliency map.
pub fn saliency_confidence(map: &SaliencyMap) -> Result<f32> {
    if map.state() != MapState::Normalized {
        return Err(Error::MapNotNormalized);
    }
    let sum: f32 = map.values().iter().sum();
    Ok(sum / map.values().len() as f32)
}

/// R1 = ce* (1 - S): high error with confident saliency.
pub fn r1(ce_star: f32, s_hat: f32) -> Result<f32> {
    check_unit("ce_star", ce_star)?;
    check_unit("s_hat", s_hat)?;
    Ok(ce_star * (1.0 - s_hat))
}

/// R2 = S (1 - ce*): confident saliency with low error.
pub fn r2(ce_star: f32, s_hat: f32) -> Result<f32> {
    check_unit("ce_star", ce_star)?;
    check_unit("s_hat", s_hat)?;
    Ok(s_hat * (1.0 - ce_star))
}

fn check_unit(name: &'static str, value: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::UnitInterval { name, value: f64::from(value) });
    }
    Ok(())
}

/// The full per-sample combination from already-computed terms.
pub fn combine_terms(
    lambda: f32,
    ce_star: f32,
    s_hat: f32,
    r1_enabled: bool,
    r2_enabled: bool,
) -> Result<f32> {
    check_unit("lambda", lambda)?;
    let mut total = lambda * ce_star + (1.0 - lambda) * s_hat;
    if r1_enabled {
        total += r1(ce_star, s_hat)?;
    } else {
        check_unit("ce_star", ce_star)?;
        check_unit("s_hat", s_hat)?;
    }
    if r2_enabled {
        total += r2(ce_star, s_hat)?;
    }
    Ok(total)
}

/// Pixel-wise cross entropy of a normalized map against a binary mask,
/// scaled by 1/ln(1e12) and clamped to [0, 1].
pub fn pwce(map: &SaliencyMap, mask: &Tensor) -> Result<f32> {
    if map.state() != MapState::Normalized {
        return Err(Error::MapNotNormalized);
    }
    if mask.shape() != [map.height(), map.width()] {
        return Err(Error::ShapeMismatch {
            context: "pwce mask".into(),
            expected: format!("[{}, {}]", map.height(), map.width()),
            actual: format!("{:?}", mask.shape()),
        });
    }
    for &v in mask.data() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::InvalidConfig(format!("mask must be binary, found {v}")));
        }
    }
    let mut acc = 0.0f64;
    for (p, t) in map.values().iter().zip(mask.data().iter()) {
        // f32 cannot represent 1 - 1e-12, so the clamp must happen in f64 or
        // an exact hit (p = t = 1) would produce 0 * ln(0) = NaN.
        let p = f64::from(*p).clamp(f64::from(PROB_EPS), 1.0 - f64::from(PROB_EPS));
        let t = f64::from(*t);
        acc -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    let bce = (acc / map.values().len() as f64) as f32;
    Ok((bce / (1.0e12f32).ln()).min(1.0))
}

// ---- tape construction --------------------------------------------------------

/// Inner-pass saliency quantities captured at a fixed point and treated as
/// constants by the loss: the Grad-CAM channel weights and, for Guided
/// Grad-CAM, the guided input factor.
#[derive(Debug, Clone)]
pub struct DetachedSaliency {
    pub alpha: Vec<f32>,
    pub guided: Option<Vec<f32>>,
}

/// Min-max normalization recorded on the tape. A constant map becomes an
/// all-zero constant (no gradient), mirroring `saliency::normalize_map`.
fn normalize_on_tape(tape: &mut Tape, raw: NodeId) -> Result<NodeId> {
    let (mn_idx, mx_idx) = kernels::argminmax(tape.value(raw));
    let mn = tape.value(raw)[mn_idx];
    let mx = tape.value(raw)[mx_idx];
    if mx == mn {
        let shape = tape.shape(raw).to_vec();
        return Ok(tape.constant(Tensor::zeros(shape)));
    }
    let mn_node = tape.min_all(raw)?;
    let mx_node = tape.max_all(raw)?;
    let shifted = tape.sub_broadcast(raw, mn_node)?;
    let range = tape.sub(mx_node, mn_node)?;
    let inv = tape.recip(range)?;
    tape.mul_broadcast(shifted, inv)
}

/// Computes the detached saliency quantities at the model's current
/// parameters; `None` when the loss has no saliency term.
pub fn detached_saliency_at(
    model: &Model,
    example: &LabeledExample,
    cfg: &LossConfig,
) -> Result<Option<DetachedSaliency>> {
    cfg.validate()?;
    if !cfg.kind.uses_saliency() {
        return Ok(None);
    }
    let mut tape = Tape::new();
    let trace = model.forward_on_tape(&mut tape, &example.image)?;
    let d = compute_detached(&mut tape, model, &trace, example.label, cfg.method)?;
    Ok(Some(d))
}

fn compute_detached(
    tape: &mut Tape,
    model: &Model,
    trace: &ForwardTrace,
    class: usize,
    method: SaliencyMethod,
) -> Result<DetachedSaliency> {
    let y = tape.index(trace.logits, class)?;
    let inner = tape.backward(y, &[trace.saliency], false)?;
    let acts = tape.tensor(trace.saliency);
    let alpha = saliency::grad_cam_weights(&acts, &inner[0])?;
    let guided = if method == SaliencyMethod::GuidedGradCam {
        let g = tape.backward_guided(y, &[trace.input])?;
        let (c, h, w) = model.input_shape();
        Some(saliency::reduce_input_channels(c, h, w, g[0].data()))
    } else {
        None
    };
    Ok(DetachedSaliency { alpha, guided })
}

struct SampleGraph {
    total: NodeId,
    terms: SampleLoss,
}

/// Records the complete per-sample loss on `tape` after `trace` has been
/// recorded. When `detached` is given, the inner-pass quantities are taken
/// from it instead of being recomputed (the finite-difference oracle relies
/// on this to hold them fixed across perturbations).
fn build_sample_loss(
    tape: &mut Tape,
    model: &Model,
    trace: &ForwardTrace,
    example: &LabeledExample,
    cfg: &LossConfig,
    detached: Option<&DetachedSaliency>,
) -> Result<SampleGraph> {
    let class_count = model.class_count();
    if example.label >= class_count {
        return Err(Error::ClassOutOfRange { class: example.label, count: class_count });
    }

    // ce* = min(-ln(max(p, eps)) / denom, 1)
    let p = tape.index(trace.probs, example.label)?;
    let pc = tape.clamp_min(p, PROB_EPS)?;
    let lg = tape.log(pc)?;
    let raw_ce = tape.affine(lg, -1.0, 0.0)?;
    let denom = match cfg.ce_norm {
        CeNormalization::DivideByClassCount => class_count as f32,
        CeNormalization::DivideByLogClassCount => (class_count as f32).ln(),
    };
    let scaled = tape.affine(raw_ce, 1.0 / denom, 0.0)?;
    let ce = tape.clamp_max(scaled, 1.0)?;

    // saliency confidence (or pixel-wise cross entropy) on the same tape
    let conf = if cfg.kind.uses_saliency() {
        let d_owned;
        let d = match detached {
            Some(d) => d,
            None => {
                d_owned = compute_detached(tape, model, trace, example.label, cfg.method)?;
                &d_owned
            }
        };
        let weighted = tape.weighted_channel_sum(trace.saliency, d.alpha.clone())?;
        let cam = tape.relu(weighted)?;
        let map = match cfg.method {
            SaliencyMethod::GradCam => cam,
            SaliencyMethod::GuidedGradCam => {
                let (_, h, w) = model.input_shape();
                let up = tape.upsample_nearest(cam, h, w)?;
                let guided = d.guided.clone().ok_or_else(|| {
                    Error::InvalidConfig("guided factor missing for guided-gradcam".into())
                })?;
                tape.mul_const(up, guided)?
            }
            SaliencyMethod::GuidedBackprop => unreachable!("rejected by validate"),
        };
        let norm = normalize_on_tape(tape, map)?;
        let conf = match cfg.kind {
            LossKind::Trustworthy => tape.mean_all(norm)?,
            LossKind::TrustworthyPwce => {
                let mask = example.mask.as_ref().ok_or(Error::MaskMissing)?;
                let (mh, mw) = (tape.shape(norm)[0], tape.shape(norm)[1]);
                if mask.shape() != [mh, mw] {
                    return Err(Error::ShapeMismatch {
                        context: "pwce mask".into(),
                        expected: format!("[{mh}, {mw}]"),
                        actual: format!("{:?}", mask.shape()),
                    });
                }
                let bce = tape.bce_mean(norm, mask.data().to_vec())?;
                let scaled = tape.affine(bce, 1.0 / (1.0e12f32).ln(), 0.0)?;
                tape.clamp_max(scaled, 1.0)?
            }
            LossKind::CrossEntropyOnly => unreachable!("uses_saliency is false"),
        };
        Some(conf)
    } else {
        None
    };

    // total = lambda ce + (1-lambda) conf + R1 + R2, skipping exact-zero
    // coefficients and ablated penalties so they contribute no graph at all
    let lambda = if cfg.kind.uses_saliency() { cfg.lambda } else { 1.0 };
    let mut r1_val = 0.0;
    let mut r2_val = 0.0;
    let mut parts: Vec<NodeId> = Vec::new();
    if lambda != 0.0 {
        parts.push(tape.affine(ce, lambda, 0.0)?);
    }
    if let Some(conf) = conf {
        if 1.0 - lambda != 0.0 {
            parts.push(tape.affine(conf, 1.0 - lambda, 0.0)?);
        }
        if cfg.r1_enabled {
            let one_minus_conf = tape.affine(conf, -1.0, 1.0)?;
            let node = tape.mul(ce, one_minus_conf)?;
            r1_val = tape.value(node)[0];
            parts.push(node);
        }
        if cfg.r2_enabled {
            let one_minus_ce = tape.affine(ce, -1.0, 1.0)?;
            let node = tape.mul(conf, one_minus_ce)?;
            r2_val = tape.value(node)[0];
            parts.push(node);
        }
    }
    let mut total = parts[0];
    for part in &parts[1..] {
        total = tape.add(total, *part)?;
    }

    Ok(SampleGraph {
        total,
        terms: SampleLoss {
            ce: tape.value(ce)[0],
            s_hat: conf.map_or(0.0, |c| tape.value(c)[0]),
            r1: r1_val,
            r2: r2_val,
            total: tape.value(total)[0],
        },
    })
}

/// The per-sample loss and the gradients for the single unfrozen layer.
pub fn per_sample_loss(
    model: &Model,
    example: &LabeledExample,
    cfg: &LossConfig,
) -> Result<(SampleLoss, Vec<LayerGrads>)> {
    cfg.validate()?;
    let unfrozen = check_single_unfrozen(model)?;
    let mut tape = Tape::new();
    let trace = model.forward_on_tape(&mut tape, &example.image)?;
    let graph = build_sample_loss(&mut tape, model, &trace, example, cfg, None)?;
    let idx = model
        .layers()
        .iter()
        .position(|l| l.spec.name == unfrozen)
        .expect("unfrozen layer exists");
    let (w_node, b_node) = trace.params[idx].expect("unfrozen layer has parameters");
    let grads = tape.backward(graph.total, &[w_node, b_node], false)?;
    let mut it = grads.into_iter();
    Ok((
        graph.terms,
        vec![LayerGrads {
            layer: unfrozen.to_string(),
            weight: it.next().expect("two gradients"),
            bias: it.next().expect("two gradients"),
        }],
    ))
}

/// Loss value only, with the inner-pass quantities held at `detached`.
/// This is the scalar function the finite-difference oracle perturbs.
pub fn loss_value_with_detached(
    model: &Model,
    example: &LabeledExample,
    cfg: &LossConfig,
    detached: Option<&DetachedSaliency>,
) -> Result<f32> {
    cfg.validate()?;
    let mut tape = Tape::new();
    let trace = model.forward_on_tape(&mut tape, &example.image)?;
    let graph = build_sample_loss(&mut tape, model, &trace, example, cfg, detached)?;
    Ok(graph.terms.total)
}

fn check_single_unfrozen(model: &Model) -> Result<&str> {
    let unfrozen = model.unfrozen_layers();
    match unfrozen.as_slice() {
        [] => Err(Error::NoUnfrozenLayer),
        [one] => Ok(one),
        many => Err(Error::InvalidConfig(format!(
            "training expects exactly one unfrozen layer, found {}: {}",
            many.len(),
            many.join(", ")
        ))),
    }
}

/// Mean loss and mean gradients over a batch. Per-sample work may run in
/// parallel; reductions are sequential in index order, so the result is
/// bit-identical across execution modes and thread counts.
pub fn batch_loss_and_grads(
    model: &Model,
    batch: &[&LabeledExample],
    cfg: &LossConfig,
    mode: ExecMode,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    check_single_unfrozen(model)?;

    let per_sample =
        parallel::try_map_indexed(mode, batch.len(), |i| per_sample_loss(model, batch[i], cfg))?;

    let n = batch.len() as f32;
    let inv = 1.0 / n;
    let mut samples = Vec::with_capacity(per_sample.len());
    let layer = per_sample[0].1[0].layer.clone();
    let mut wsum = vec![0.0f32; per_sample[0].1[0].weight.len()];
    let mut bsum = vec![0.0f32; per_sample[0].1[0].bias.len()];
    let (mut ce, mut s_hat, mut r1m, mut r2m, mut total) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (terms, grads) in per_sample {
        samples.push(terms);
        ce += f64::from(terms.ce);
        s_hat += f64::from(terms.s_hat);
        r1m += f64::from(terms.r1);
        r2m += f64::from(terms.r2);
        total += f64::from(terms.total);
        for (acc, v) in wsum.iter_mut().zip(grads[0].weight.data()) {
            *acc += v;
        }
        for (acc, v) in bsum.iter_mut().zip(grads[0].bias.data()) {
            *acc += v;
        }
    }
    for v in wsum.iter_mut() {
        *v *= inv;
    }
    for v in bsum.iter_mut() {
        *v *= inv;
    }

    let nn = f64::from(n);
    let lambda = if cfg.kind.uses_saliency() { f64::from(cfg.lambda) } else { 1.0 };
    let (wshape, bshape) = {
        let l = model.layer(&layer).expect("layer exists");
        (
            l.weight.as_ref().expect("param layer").shape().to_vec(),
            l.bias.as_ref().expect("param layer").shape().to_vec(),
        )
    };
    Ok(BatchLoss {
        breakdown: LossBreakdown {
            ce: ce / nn,
            s_hat: s_hat / nn,
            r1: r1m / nn,
            r2: r2m / nn,
            total: total / nn,
            lambda,
        },
        samples,
        grads: vec![LayerGrads {
            layer,
            weight: Tensor::new(wshape, wsum)?,
            bias: Tensor::new(bshape, bsum)?,
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(values: Vec<f32>, h: usize, w: usize, state: MapState) -> SaliencyMap {
        SaliencyMap::new(values, h, w, 0, "conv", state, SaliencyMethod::GradCam).unwrap()
    }

    #[test]
    fn ce_examples() {
        // one-hot
        assert_eq!(per_sample_ce(&[0.0, 1.0], 1).unwrap(), 0.0);
        // uniform over four classes
        let ce = per_sample_ce(&[0.25; 4], 2).unwrap();
        assert!((ce - 4.0f32.ln()).abs() < 1e-6);
        // clamp at 1e-12
        let ce = per_sample_ce(&[1e-20, 1.0], 0).unwrap();
        assert!((ce - -(1e-12f32).ln()).abs() < 1e-4);
        assert!(matches!(per_sample_ce(&[1.0], 3), Err(Error::ClassOutOfRange { .. })));
    }

    #[test]
    fn ce_normalization_examples() {
        // uniform prediction saturates the log-count mode exactly
        let n = normalize_ce(4.0f32.ln(), 4, CeNormalization::DivideByLogClassCount).unwrap();
        assert_eq!(n, 1.0);
        assert_eq!(normalize_ce(0.0, 4, CeNormalization::DivideByClassCount).unwrap(), 0.0);
        assert_eq!(normalize_ce(2.0, 4, CeNormalization::DivideByClassCount).unwrap(), 0.5);
        // clamps above the denominator
        assert_eq!(normalize_ce(9.0, 4, CeNormalization::DivideByClassCount).unwrap(), 1.0);
        assert!(matches!(
            normalize_ce(1.0, 1, CeNormalization::DivideByClassCount),
            Err(Error::InvalidClassCount { count: 1 })
        ));
        assert!(normalize_ce(-0.1, 4, CeNormalization::DivideByClassCount).is_err());
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(saliency_confidence(&map(vec![1.0; 16], 4, 4, MapState::Normalized)).unwrap(), 1.0);
        assert_eq!(saliency_confidence(&map(vec![0.0; 16], 4, 4, MapState::Normalized)).unwrap(), 0.0);
        let checker: Vec<f32> = (0..16).map(|i| (i % 2) as f32).collect();
        assert_eq!(saliency_confidence(&map(checker, 4, 4, MapState::Normalized)).unwrap(), 0.5);
        assert!(matches!(
            saliency_confidence(&map(vec![1.0; 4], 2, 2, MapState::Raw)),
            Err(Error::MapNotNormalized)
        ));
    }

    #[test]
    fn interaction_penalty_examples() {
        assert!((r1(0.2, 0.4).unwrap() - 0.12).abs() < 1e-7);
        assert!((r2(0.2, 0.4).unwrap() - 0.32).abs() < 1e-7);
        assert!(matches!(r1(1.2, 0.4), Err(Error::UnitInterval { name: "ce_star", .. })));
        assert!(matches!(r2(0.2, -0.1), Err(Error::UnitInterval { name: "s_hat", .. })));
    }

    #[test]
    fn worked_combination_examples() {
        // lambda 0.9, ce* 0.2, S 0.4: 0.18 + 0.04 + 0.12 + 0.32 = 0.66
        let total = combine_terms(0.9, 0.2, 0.4, true, true).unwrap();
        assert!((total - 0.66).abs() < 1e-6, "{total}");
        // perfect prediction with blank saliency
        assert_eq!(combine_terms(0.9, 0.0, 0.0, true, true).unwrap(), 0.0);
        // ablations drop exactly one penalty
        let no_r1 = combine_terms(0.9, 0.2, 0.4, false, true).unwrap();
        assert!((no_r1 - 0.54).abs() < 1e-6, "{no_r1}");
        let no_r2 = combine_terms(0.9, 0.2, 0.4, true, false).unwrap();
        assert!((no_r2 - 0.34).abs() < 1e-6, "{no_r2}");
        // saturated boundary: both penalties vanish
        let boundary = combine_terms(0.9, 1.0, 1.0, true, true).unwrap();
        assert!((boundary - 1.0).abs() < 1e-6, "{boundary}");
    }

    #[test]
    fn interaction_identities_on_a_grid() {
        for i in 0..=100 {
            for j in 0..=100 {
                let c = i as f32 / 100.0;
                let s = j as f32 / 100.0;
                let sum = r1(c, s).unwrap() + r2(c, s).unwrap();
                let expect = c + s - 2.0 * c * s;
                assert!((sum - expect).abs() < 1e-6);
                assert!((-1e-7..=1.0 + 1e-6).contains(&sum), "c={c} s={s} sum={sum}");
                // swap symmetry
                assert_eq!(r1(c, s).unwrap(), r2(s, c).unwrap());
            }
        }
    }

    #[test]
    fn total_reconstructs_from_terms() {
        for i in 0..20 {
            let c = (i as f32 * 37.0 % 101.0) / 101.0;
            let s = (i as f32 * 53.0 % 97.0) / 97.0;
            let lambda = (i as f32 * 11.0 % 89.0) / 89.0;
            let total = combine_terms(lambda, c, s, true, true).unwrap();
            let rebuilt =
                lambda * c + (1.0 - lambda) * s + r1(c, s).unwrap() + r2(c, s).unwrap();
            assert!((total - rebuilt).abs() < 1e-6);
        }
    }

    #[test]
    fn confidence_slope_is_two_minus_lambda_minus_two_ce() {
        for &lambda in &[0.0f32, 0.5, 0.9, 1.0] {
            for i in 0..=10 {
                let c = i as f32 / 10.0;
                let h = 1e-3f32;
                let s = 0.5;
                let up = combine_terms(lambda, c, s + h, true, true).unwrap();
                let down = combine_terms(lambda, c, s - h, true, true).unwrap();
                let slope = (up - down) / (2.0 * h);
                let expect = 2.0 - lambda - 2.0 * c;
                assert!((slope - expect).abs() < 1e-3, "lambda={lambda} c={c} slope={slope}");
            }
        }
    }

    #[test]
    fn pwce_examples() {
        let mask = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        // map equals mask: essentially zero
        let exact = map(vec![1.0, 0.0], 1, 2, MapState::Normalized);
        assert!(pwce(&exact, &mask).unwrap() < 1e-6);
        // inverted map: saturates to one
        let inverted = map(vec![0.0, 1.0], 1, 2, MapState::Normalized);
        assert!((pwce(&inverted, &mask).unwrap() - 1.0).abs() < 1e-6);
        // uniform 0.5 map: ln 2 scaled by 1/ln(1e12)
        let half = map(vec![0.5, 0.5], 1, 2, MapState::Normalized);
        let got = pwce(&half, &mask).unwrap();
        let expect = 2.0f32.ln() / (1.0e12f32).ln();
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
        // raw maps are rejected
        assert!(matches!(
            pwce(&map(vec![0.5, 0.5], 1, 2, MapState::Raw), &mask),
            Err(Error::MapNotNormalized)
        ));
        // non-binary mask
        let bad = Tensor::new(vec![1, 2], vec![0.5, 0.0]).unwrap();
        assert!(pwce(&half, &bad).is_err());
    }

    #[test]
    fn loss_config_validation() {
        let mut cfg = LossConfig { lambda: 1.5, ..LossConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::UnitInterval { name: "lambda", .. })));
        cfg.lambda = 0.9;
        cfg.method = SaliencyMethod::GuidedBackprop;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        cfg.kind = LossKind::CrossEntropyOnly;
        assert!(cfg.validate().is_ok());

        let ab = LossConfig::default()
            .with_ablation(AblationMode::R1Zero)
            .with_ablation(AblationMode::R2Zero);
        assert!(!ab.r1_enabled && !ab.r2_enabled);
    }

    #[test]
    fn parsing_round_trips() {
        for kind in [LossKind::CrossEntropyOnly, LossKind::Trustworthy, LossKind::TrustworthyPwce] {
            assert_eq!(kind.as_str().parse::<LossKind>().unwrap(), kind);
        }
        for mode in [AblationMode::Full, AblationMode::R1Zero, AblationMode::R2Zero] {
            assert_eq!(mode.as_str().parse::<AblationMode>().unwrap(), mode);
        }
        for norm in [CeNormalization::DivideByClassCount, CeNormalization::DivideByLogClassCount] {
            assert_eq!(norm.as_str().parse::<CeNormalization>().unwrap(), norm);
        }
        assert!("mystery".parse::<LossKind>().is_err());
    }
}
