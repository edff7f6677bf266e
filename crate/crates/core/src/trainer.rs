//! SGD training with layer freezing, evaluation against mask ground truth,
//! transfer heads, and hyperparameter grid search.

use crate::data::{self, LabeledExample};
use crate::error::{Error, Result};
use crate::layers::{LayerKind, LayerSpec};
use crate::loss::{
    batch_loss_and_grads, saliency_confidence, AblationMode, CeNormalization, LayerGrads,
    LossBreakdown, LossConfig, LossKind,
};
use crate::metrics::{
    case_breakdown, case_of, classification_metrics, energy_in_mask, saliency_accurate, ssim_maps,
    CaseLabel, MetricsReport,
};
use crate::model::Model;
use crate::parallel::{self, ExecMode};
use crate::saliency::{compute_saliency, normalize_map, SaliencyMap, SaliencyMethod};

/// Updated parameters beyond this magnitude mean the run has diverged; with
/// unit-range inputs and every loss term clamped to [0, 1], no healthy run
/// comes anywhere near it. Aborting here keeps all downstream arithmetic
/// finite.
const DIVERGENCE_GUARD: f32 = 1e9;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub method: SaliencyMethod,
    pub lambda: f32,
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub ablation: AblationMode,
    pub seed: u64,
    pub ce_norm: CeNormalization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Trustworthy,
            method: SaliencyMethod::GradCam,
            lambda: 0.9,
            lr: 0.01,
            epochs: 50,
            batch_size: 32,
            ablation: AblationMode::Full,
            seed: 0,
            ce_norm: CeNormalization::DivideByClassCount,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        self.loss_config().validate()
    }

    /// The per-batch loss configuration this training run uses.
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            kind: self.loss,
            method: self.method,
            lambda: self.lambda,
            ce_norm: self.ce_norm,
            r1_enabled: true,
            r2_enabled: true,
        }
        .with_ablation(self.ablation)
    }
}

/// One gradient step: w <- w - lr g on exactly the unfrozen layers named in
/// `grads`. A gradient aimed at a frozen layer is a contract breach upstream.
pub fn sgd_step(model: &mut Model, grads: &[LayerGrads], lr: f32) -> Result<()> {
    for g in grads {
        let layer = model
            .layer(&g.layer)
            .ok_or_else(|| Error::InvalidConfig(format!("no layer named '{}'", g.layer)))?;
        if layer.spec.frozen {
            return Err(Error::FrozenParameterGradient { layer: g.layer.clone() });
        }
        let (Some(w), Some(b)) = (&layer.weight, &layer.bias) else {
            return Err(Error::InvalidConfig(format!("layer '{}' has no parameters", g.layer)));
        };
        if w.shape() != g.weight.shape() || b.shape() != g.bias.shape() {
            return Err(Error::ShapeMismatch {
                context: format!("sgd_step '{}'", g.layer),
                expected: format!("{:?} / {:?}", w.shape(), b.shape()),
                actual: format!("{:?} / {:?}", g.weight.shape(), g.bias.shape()),
            });
        }
        let layer = model.layer_mut(&g.layer).expect("checked above");
        let w = layer.weight.as_mut().expect("checked above");
        for (p, d) in w.data_mut().iter_mut().zip(g.weight.data()) {
            *p -= lr * d;
        }
        let b = layer.bias.as_mut().expect("checked above");
        for (p, d) in b.data_mut().iter_mut().zip(g.bias.data()) {
            *p -= lr * d;
        }
    }
    Ok(())
}

fn check_divergence(model: &Model, step: usize, last: LossBreakdown) -> Result<()> {
    for name in model.unfrozen_layers() {
        let layer = model.layer(name).expect("name from model");
        for t in [&layer.weight, &layer.bias] {
            let Some(t) = t else { continue };
            if t.data().iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_GUARD) {
                return Err(Error::NanAbort { step, last });
            }
        }
    }
    Ok(())
}

/// Runs `epochs` over shuffled batches: forward, saliency (when the loss asks
/// for it), loss, backward, SGD step. Returns the trained model and one
/// breakdown per step. Fully deterministic given (seed, config, dataset).
pub fn train(
    mut model: Model,
    dataset: &[LabeledExample],
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<(Model, Vec<LossBreakdown>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let loss_cfg = cfg.loss_config();
    let mut log = Vec::new();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let batches =
            data::epoch_batches(dataset.len(), cfg.batch_size, data::shuffle_seed(cfg.seed, epoch))?;
        for batch in batches {
            let refs: Vec<&LabeledExample> = batch.iter().map(|&i| &dataset[i]).collect();
            let out = batch_loss_and_grads(&model, &refs, &loss_cfg, mode)?;
            if !out.breakdown.total.is_finite() {
                let last = log.last().copied().unwrap_or(out.breakdown);
                return Err(Error::NanAbort { step, last });
            }
            sgd_step(&mut model, &out.grads, cfg.lr)?;
            check_divergence(&model, step, out.breakdown)?;
            log.push(out.breakdown);
            step += 1;
        }
    }
    Ok((model, log))
}

/// Per-sample evaluation record: prediction, the normalized saliency map at
/// the predicted class (input resolution), and the mask-derived judgments.
#[derive(Debug, Clone)]
pub struct SampleEval {
    pub id: u64,
    pub truth: usize,
    pub pred: usize,
    pub map: SaliencyMap,
    pub s_hat: f32,
    pub energy: f64,
    pub accurate: bool,
    pub case: CaseLabel,
}

/// Evaluates a model on a mask-annotated dataset: classification metrics,
/// saliency accuracy at threshold `tau`, and the four-case breakdown. Maps
/// explain the predicted class.
pub fn evaluate(
    model: &Model,
    dataset: &[LabeledExample],
    method: SaliencyMethod,
    tau: f32,
    mode: ExecMode,
) -> Result<(MetricsReport, Vec<SampleEval>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let evals = parallel::try_map_indexed(mode, dataset.len(), |i| {
        let ex = &dataset[i];
        let mask = ex.mask.as_ref().ok_or(Error::MaskMissing)?;
        let pred = model.predict(&ex.image)?;
        let map = normalize_map(&compute_saliency(model, ex, pred, method)?)?;
        let s_hat = saliency_confidence(&map)?;
        let energy = energy_in_mask(&map, mask)?;
        let accurate = saliency_accurate(&map, mask, tau)?;
        Ok(SampleEval {
            id: ex.id,
            truth: ex.label,
            pred,
            map,
            s_hat,
            energy,
            accurate,
            case: case_of(pred, ex.label, accurate),
        })
    })?;

    let preds: Vec<usize> = evals.iter().map(|e| e.pred).collect();
    let truths: Vec<usize> = evals.iter().map(|e| e.truth).collect();
    let cls = classification_metrics(&preds, &truths)?;
    let cases: Vec<CaseLabel> = evals.iter().map(|e| e.case).collect();
    let breakdown = case_breakdown(&cases)?;
    let energy = evals.iter().map(|e| e.energy).sum::<f64>() / evals.len() as f64;
    Ok((
        MetricsReport {
            accuracy: cls.accuracy,
            precision: cls.precision,
            recall: cls.recall,
            case_fractions: breakdown.fractions,
            case_intervals: breakdown.intervals,
            sample_count: breakdown.n,
            energy_in_mask: energy,
            mean_ssim_vs_baseline: None,
        },
        evals,
    ))
}

/// Mean SSIM of `evals` maps against a reference evaluation of the same
/// dataset, stored into the report. Samples are matched by position and id.
pub fn attach_baseline_ssim(
    report: &mut MetricsReport,
    evals: &[SampleEval],
    baseline: &[SampleEval],
) -> Result<f64> {
    if evals.len() != baseline.len() || evals.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "ssim comparison needs matching non-empty evaluations, got {} and {}",
            evals.len(),
            baseline.len()
        )));
    }
    let mut sum = 0.0f64;
    for (e, b) in evals.iter().zip(baseline.iter()) {
        if e.id != b.id {
            return Err(Error::InvalidConfig(format!(
                "ssim comparison got mismatched samples (id {} vs {})",
                e.id, b.id
            )));
        }
        sum += ssim_maps(&e.map, &b.map)?;
    }
    let mean = sum / evals.len() as f64;
    report.mean_ssim_vs_baseline = Some(mean);
    Ok(mean)
}

/// Side-by-side evaluation of two models of the same architecture.
#[derive(Debug, Clone)]
pub struct CompareReport {
    pub report_a: MetricsReport,
    /// Report for model B with `mean_ssim_vs_baseline` set against model A.
    pub report_b: MetricsReport,
    /// Mean per-sample SSIM between the two models' maps.
    pub mean_ssim: f64,
}

fn same_architecture(a: &Model, b: &Model) -> bool {
    a.input_shape() == b.input_shape()
        && a.class_count() == b.class_count()
        && a.layers().len() == b.layers().len()
        && a.layers()
            .iter()
            .zip(b.layers().iter())
            .all(|(x, y)| x.spec.name == y.spec.name && x.spec.kind == y.spec.kind)
}

pub fn compare_models(
    a: &Model,
    b: &Model,
    dataset: &[LabeledExample],
    method: SaliencyMethod,
    tau: f32,
    mode: ExecMode,
) -> Result<CompareReport> {
    if !same_architecture(a, b) {
        return Err(Error::ArchitectureMismatch(
            "models must share layer names, kinds and shapes to be compared".into(),
        ));
    }
    let (report_a, evals_a) = evaluate(a, dataset, method, tau, mode)?;
    let (mut report_b, evals_b) = evaluate(b, dataset, method, tau, mode)?;
    let mean_ssim = attach_baseline_ssim(&mut report_b, &evals_b, &evals_a)?;
    Ok(CompareReport { report_a, report_b, mean_ssim })
}

/// Inserts a fresh trainable 1x1-style conv block after the last conv layer,
/// dropping everything behind it and appending a new pool/dense/softmax head.
/// All pre-existing layers are frozen; the new conv layer becomes the
/// saliency layer. `seed` initializes the new head.
pub fn append_transfer_head(
    model: &Model,
    filters: usize,
    kernel: (usize, usize),
    stride: usize,
    seed: u64,
) -> Result<Model> {
    let last_conv = model
        .layers()
        .iter()
        .rposition(|l| matches!(l.spec.kind, LayerKind::Conv2d { .. }))
        .ok_or(Error::NoConvLayer)?;

    let mut specs: Vec<LayerSpec> = model.layers()[..=last_conv]
        .iter()
        .map(|l| {
            let mut s = l.spec.clone();
            s.frozen = true;
            s
        })
        .collect();
    specs.push(LayerSpec::conv2d("transfer_conv", filters, kernel, stride, 0).unfrozen());
    specs.push(LayerSpec::global_avg_pool("transfer_gap"));
    specs.push(LayerSpec::dense("transfer_fc", model.class_count()));
    specs.push(LayerSpec::softmax("transfer_softmax"));

    let mut out = Model::new(
        specs,
        "transfer_conv",
        model.input_shape(),
        model.class_count(),
        seed,
    )?;
    // carry the original parameters over for every kept layer
    for layer in &model.layers()[..=last_conv] {
        if layer.spec.has_params() {
            let dst = out.layer_mut(&layer.spec.name).expect("kept layer");
            dst.weight.clone_from(&layer.weight);
            dst.bias.clone_from(&layer.bias);
        }
    }
    Ok(out)
}

/// One grid-search row: the hyperparameters and the evaluation they reached.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub lr: f32,
    pub lambda: f32,
    pub report: MetricsReport,
}

/// Trains one model per (lr, lambda) cell from a shared initialization of
/// `proto` and ranks the rows by accuracy (ties keep (lr, lambda) grid
/// order).
pub fn grid_search(
    proto: &Model,
    train_data: &[LabeledExample],
    eval_data: &[LabeledExample],
    base: &TrainConfig,
    lrs: &[f32],
    lambdas: &[f32],
    tau: f32,
    mode: ExecMode,
) -> Result<Vec<GridRow>> {
    if lrs.is_empty() || lambdas.is_empty() {
        return Err(Error::InvalidConfig("grid_search needs non-empty grids".into()));
    }
    let mut rows = Vec::with_capacity(lrs.len() * lambdas.len());
    for &lr in lrs {
        for &lambda in lambdas {
            let cfg = TrainConfig { lr, lambda, ..base.clone() };
            let mut model = proto.clone();
            model.reinitialize(cfg.seed);
            let (model, _) = train(model, train_data, &cfg, mode)?;
            let (report, _) = evaluate(&model, eval_data, cfg.method, tau, mode)?;
            rows.push(GridRow { lr, lambda, report });
        }
    }
    rows.sort_by(|a, b| {
        b.report
            .accuracy
            .partial_cmp(&a.report.accuracy)
            .expect("accuracies are finite")
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_shapes, ShapeClass, ShapesConfig};
    use crate::metrics::DEFAULT_TAU;
    use crate::tensor::Tensor;

    fn micro_model(seed: u64) -> Model {
        Model::new(
            vec![
                LayerSpec::conv2d("c", 1, (1, 1), 1, 0),
                LayerSpec::global_avg_pool("g"),
                LayerSpec::dense("d", 2).unfrozen(),
                LayerSpec::softmax("s"),
            ],
            "c",
            (1, 2, 2),
            2,
            seed,
        )
        .unwrap()
    }

    fn tiny_shapes(seed: u64, per_class: usize) -> Vec<crate::data::LabeledExample> {
        gen_shapes(&ShapesConfig {
            classes: vec![ShapeClass::Square, ShapeClass::Circle],
            image_size: 16,
            samples_per_class: per_class,
            noise_level: 0.05,
            distractor: false,
            seed,
        })
        .unwrap()
    }

    fn quadrant_data() -> Vec<LabeledExample> {
        // class 0 lights the top-left quadrant, class 1 the bottom-right
        let mut out = Vec::new();
        for i in 0..20 {
            let label = i % 2;
            let v = 0.75 + 0.01 * (i / 2) as f32;
            let mut img = vec![0.0f32; 64];
            let mut mask = vec![0.0f32; 64];
            for y in 0..4 {
                for x in 0..4 {
                    let (yy, xx) = if label == 0 { (y, x) } else { (y + 4, x + 4) };
                    img[yy * 8 + xx] = v;
                    mask[yy * 8 + xx] = 1.0;
                }
            }
            out.push(LabeledExample {
                id: i as u64,
                image: Tensor::new(vec![1, 8, 8], img).unwrap(),
                label,
                mask: Some(Tensor::new(vec![8, 8], mask).unwrap()),
            });
        }
        out
    }

    fn quadrant_model(seed: u64) -> Model {
        Model::new(
            vec![
                LayerSpec::conv2d("conv1", 4, (3, 3), 1, 1),
                LayerSpec::relu("relu1"),
                LayerSpec::maxpool2("pool1"),
                LayerSpec::conv2d("conv2", 8, (3, 3), 1, 1).unfrozen(),
                LayerSpec::relu("relu2"),
                LayerSpec::global_avg_pool("gap"),
                LayerSpec::dense("fc", 2),
                LayerSpec::softmax("softmax"),
            ],
            "conv2",
            (1, 8, 8),
            2,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn sgd_update_rule_examples() {
        let mut m = micro_model(3);
        m.layer_mut("d").unwrap().weight = Some(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap());
        let grads = vec![LayerGrads {
            layer: "d".into(),
            weight: Tensor::new(vec![2, 1], vec![0.5, 0.0]).unwrap(),
            bias: Tensor::zeros(vec![2]),
        }];
        sgd_step(&mut m, &grads, 0.1).unwrap();
        let w = m.layer("d").unwrap().weight.as_ref().unwrap();
        assert_eq!(w.data(), &[0.95, 1.0]); // w - lr g, and zero grad leaves w alone
    }

    #[test]
    fn sgd_rejects_frozen_and_unknown_layers() {
        let mut m = micro_model(3);
        let frozen = vec![LayerGrads {
            layer: "c".into(),
            weight: Tensor::zeros(vec![1, 1, 1, 1]),
            bias: Tensor::zeros(vec![1]),
        }];
        assert!(matches!(
            sgd_step(&mut m, &frozen, 0.1),
            Err(Error::FrozenParameterGradient { .. })
        ));
        let unknown = vec![LayerGrads {
            layer: "nope".into(),
            weight: Tensor::zeros(vec![1]),
            bias: Tensor::zeros(vec![1]),
        }];
        assert!(sgd_step(&mut m, &unknown, 0.1).is_err());
    }

    #[test]
    fn frozen_layers_are_bit_identical_through_training() {
        let data = tiny_shapes(11, 6);
        let model = Model::small_cnn(2, 16, 5).unwrap();
        let conv1_before = model.layer("conv1").unwrap().weight.clone().unwrap();
        let fc_before = model.layer("fc").unwrap().weight.clone().unwrap();
        let conv2_before = model.layer("conv2").unwrap().weight.clone().unwrap();
        let cfg = TrainConfig {
            loss: LossKind::CrossEntropyOnly,
            epochs: 3,
            batch_size: 4,
            lr: 0.1,
            seed: 2,
            ..TrainConfig::default()
        };
        let (trained, log) = train(model, &data, &cfg, ExecMode::Sequential).unwrap();
        assert_eq!(log.len(), 3 * 3); // 12 samples / batch 4 = 3 steps per epoch
        assert!(trained.layer("conv1").unwrap().weight.as_ref().unwrap().bit_eq(&conv1_before));
        assert!(trained.layer("fc").unwrap().weight.as_ref().unwrap().bit_eq(&fc_before));
        assert!(!trained.layer("conv2").unwrap().weight.as_ref().unwrap().bit_eq(&conv2_before));
        assert!(log.iter().all(|b| b.total.is_finite()));
    }

    #[test]
    fn training_is_deterministic_across_modes() {
        let data = tiny_shapes(21, 4);
        let cfg = TrainConfig {
            loss: LossKind::Trustworthy,
            method: SaliencyMethod::GradCam,
            epochs: 2,
            batch_size: 4,
            lr: 0.05,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = |mode| {
            let model = Model::small_cnn(2, 16, 7).unwrap();
            train(model, &data, &cfg, mode).unwrap()
        };
        let (m1, log1) = run(ExecMode::Sequential);
        let (m2, log2) = run(ExecMode::Parallel);
        assert_eq!(log1, log2);
        assert!(m1
            .layer("conv2")
            .unwrap()
            .weight
            .as_ref()
            .unwrap()
            .bit_eq(m2.layer("conv2").unwrap().weight.as_ref().unwrap()));
    }

    /// With lambda = 1 and both interaction penalties disabled, the
    /// trustworthy loss reduces to cross entropy, and the weight trajectory
    /// must match CE-only training bit for bit. The train config enum only
    /// disables one penalty at a time, so the trustworthy side drives the
    /// step loop directly with both switched off.
    #[test]
    fn lambda_one_ablated_matches_cross_entropy_exactly() {
        let data = tiny_shapes(31, 4);
        let ce_cfg = TrainConfig {
            loss: LossKind::CrossEntropyOnly,
            epochs: 2,
            batch_size: 4,
            lr: 0.1,
            seed: 4,
            ..TrainConfig::default()
        };
        let (ce_model, ce_log) =
            train(Model::small_cnn(2, 16, 8).unwrap(), &data, &ce_cfg, ExecMode::Sequential)
                .unwrap();

        let loss_cfg = LossConfig {
            kind: LossKind::Trustworthy,
            method: SaliencyMethod::GradCam,
            lambda: 1.0,
            ce_norm: ce_cfg.ce_norm,
            r1_enabled: false,
            r2_enabled: false,
        };
        let mut trust_model = Model::small_cnn(2, 16, 8).unwrap();
        let mut trust_log = Vec::new();
        for epoch in 0..ce_cfg.epochs {
            let batches =
                data::epoch_batches(data.len(), 4, data::shuffle_seed(ce_cfg.seed, epoch)).unwrap();
            for batch in batches {
                let refs: Vec<&LabeledExample> = batch.iter().map(|&i| &data[i]).collect();
                let out =
                    batch_loss_and_grads(&trust_model, &refs, &loss_cfg, ExecMode::Sequential)
                        .unwrap();
                sgd_step(&mut trust_model, &out.grads, ce_cfg.lr).unwrap();
                trust_log.push(out.breakdown);
            }
        }

        assert_eq!(ce_log.len(), trust_log.len());
        for (a, b) in ce_log.iter().zip(trust_log.iter()) {
            assert_eq!(a.ce.to_bits(), b.ce.to_bits());
            assert_eq!(a.total.to_bits(), b.total.to_bits());
        }
        assert!(ce_model
            .layer("conv2")
            .unwrap()
            .weight
            .as_ref()
            .unwrap()
            .bit_eq(trust_model.layer("conv2").unwrap().weight.as_ref().unwrap()));
    }

    #[test]
    fn separable_micro_data_reaches_full_train_accuracy() {
        let data = quadrant_data();
        let cfg = TrainConfig {
            loss: LossKind::CrossEntropyOnly,
            epochs: 60,
            batch_size: 4,
            lr: 0.3,
            seed: 1,
            ..TrainConfig::default()
        };
        let (model, log) = train(quadrant_model(1), &data, &cfg, ExecMode::Sequential).unwrap();
        let correct = data
            .iter()
            .filter(|ex| model.predict(&ex.image).unwrap() == ex.label)
            .count();
        assert_eq!(correct, data.len(), "final ce {:?}", log.last());
    }

    #[test]
    fn divergent_run_aborts_with_step_and_snapshot() {
        let data = quadrant_data();
        let cfg = TrainConfig {
            loss: LossKind::CrossEntropyOnly,
            epochs: 1,
            batch_size: 4,
            lr: 1e30,
            seed: 1,
            ..TrainConfig::default()
        };
        let err = train(quadrant_model(1), &data, &cfg, ExecMode::Sequential).unwrap_err();
        match err {
            Error::NanAbort { step, last } => {
                assert_eq!(step, 0);
                assert!(last.total.is_finite());
            }
            other => panic!("expected NanAbort, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut cfg = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        cfg.lr = 0.01;
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        cfg.epochs = 1;
        cfg.lambda = 2.0;
        assert!(cfg.validate().is_err());
        cfg.lambda = 0.9;
        cfg.method = SaliencyMethod::GuidedBackprop;
        assert!(cfg.validate().is_err());
        let defaults = TrainConfig::default();
        assert!(defaults.validate().is_ok());
        assert_eq!(
            (defaults.epochs, defaults.batch_size, defaults.lr, defaults.lambda),
            (50, 32, 0.01, 0.9)
        );
    }

    #[test]
    fn evaluate_reports_consistent_cases() {
        let data = tiny_shapes(41, 5);
        let model = Model::small_cnn(2, 16, 3).unwrap();
        let (report, evals) =
            evaluate(&model, &data, SaliencyMethod::GradCam, DEFAULT_TAU, ExecMode::Parallel)
                .unwrap();
        assert_eq!(evals.len(), data.len());
        let sum: f64 = report.case_fractions.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&report.energy_in_mask));
        for e in &evals {
            assert_eq!(e.case, case_of(e.pred, e.truth, e.accurate));
            assert!((0.0..=1.0).contains(&e.energy));
        }
        assert_eq!(report.mean_ssim_vs_baseline, None);

        // a dataset without masks cannot be case-evaluated
        let mut unmasked = data.clone();
        unmasked[0].mask = None;
        assert!(matches!(
            evaluate(&model, &unmasked, SaliencyMethod::GradCam, DEFAULT_TAU, ExecMode::Sequential),
            Err(Error::MaskMissing)
        ));
    }

    #[test]
    fn self_comparison_scores_ssim_one() {
        let data = tiny_shapes(51, 4);
        let model = Model::small_cnn(2, 16, 12).unwrap();
        let report =
            compare_models(&model, &model, &data, SaliencyMethod::GradCam, DEFAULT_TAU, ExecMode::Sequential)
                .unwrap();
        assert_eq!(report.mean_ssim, 1.0);
        assert_eq!(report.report_a.accuracy, report.report_b.accuracy);
        assert_eq!(report.report_b.mean_ssim_vs_baseline, Some(1.0));

        let other = Model::small_cnn(3, 16, 12).unwrap();
        assert!(matches!(
            compare_models(&model, &other, &data, SaliencyMethod::GradCam, DEFAULT_TAU, ExecMode::Sequential),
            Err(Error::ArchitectureMismatch(_))
        ));
    }

    #[test]
    fn transfer_head_freezes_everything_but_the_new_conv() {
        let base = Model::small_cnn(3, 16, 7).unwrap();
        let m = append_transfer_head(&base, 16, (1, 1), 1, 99).unwrap();
        assert_eq!(m.unfrozen_layers(), vec!["transfer_conv"]);
        assert_eq!(m.saliency_layer(), "transfer_conv");
        // kept layers carry the original weights bit-for-bit
        for name in ["conv1", "conv2"] {
            assert!(m
                .layer(name)
                .unwrap()
                .weight
                .as_ref()
                .unwrap()
                .bit_eq(base.layer(name).unwrap().weight.as_ref().unwrap()));
        }
        // conv2 output on a 16x16 input is 8x8, so the 1x1 head keeps 8x8
        let tc = m.layer("transfer_conv").unwrap();
        assert_eq!(tc.weight.as_ref().unwrap().shape(), &[16, 16, 1, 1]);
        let (_, probs) = m.forward(&Tensor::full(vec![1, 16, 16], 0.5)).unwrap();
        assert_eq!(probs.len(), 3);
        // head is trainable end to end
        let data = tiny_shapes(61, 3);
        let cfg = TrainConfig {
            loss: LossKind::CrossEntropyOnly,
            epochs: 1,
            batch_size: 3,
            lr: 0.1,
            seed: 5,
            ..TrainConfig::default()
        };
        let m3 = append_transfer_head(&Model::small_cnn(2, 16, 7).unwrap(), 16, (1, 1), 1, 99)
            .unwrap();
        let before = m3.layer("transfer_conv").unwrap().weight.clone().unwrap();
        let (m3, _) = train(m3, &data, &cfg, ExecMode::Sequential).unwrap();
        assert!(!m3.layer("transfer_conv").unwrap().weight.as_ref().unwrap().bit_eq(&before));
    }

    #[test]
    fn singleton_grid_matches_direct_run() {
        let data = tiny_shapes(71, 4);
        let proto = Model::small_cnn(2, 16, 33).unwrap();
        let base = TrainConfig {
            loss: LossKind::CrossEntropyOnly,
            epochs: 1,
            batch_size: 4,
            lr: 0.05,
            seed: 33,
            ..TrainConfig::default()
        };
        let rows = grid_search(
            &proto,
            &data,
            &data,
            &base,
            &[0.05],
            &[0.9],
            DEFAULT_TAU,
            ExecMode::Sequential,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);

        let cfg = TrainConfig { lr: 0.05, lambda: 0.9, ..base.clone() };
        let (direct, _) = train(proto.clone(), &data, &cfg, ExecMode::Sequential).unwrap();
        let (direct_report, _) =
            evaluate(&direct, &data, cfg.method, DEFAULT_TAU, ExecMode::Sequential).unwrap();
        assert_eq!(rows[0].report, direct_report);

        // a 2x2 grid yields 4 rows ranked by accuracy
        let rows = grid_search(
            &proto,
            &data,
            &data,
            &base,
            &[0.05, 0.1],
            &[0.9, 0.5],
            DEFAULT_TAU,
            ExecMode::Sequential,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.windows(2).all(|w| w[0].report.accuracy >= w[1].report.accuracy));

        assert!(grid_search(
            &proto,
            &data,
            &data,
            &base,
            &[],
            &[0.9],
            DEFAULT_TAU,
            ExecMode::Sequential
        )
        .is_err());
    }
}
