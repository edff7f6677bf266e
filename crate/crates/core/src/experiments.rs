//! The consolidated experiment suite: a cross-entropy baseline against
//! trustworthy training under two saliency methods and two ablations,
//! repeated over seeds, on the synthetic shapes dataset with distractors.
//!
//! Per seed, all arms share the same model initialization and batch order,
//! so differences come from the loss alone and SSIM-vs-baseline compares
//! like with like. The baseline is evaluated under both saliency methods,
//! giving eight consolidated rows for seven training arms.

use crate::data::{gen_shapes, ShapeClass, ShapesConfig};
use crate::error::{Error, Result};
use crate::loss::{AblationMode, CeNormalization, LossKind};
use crate::model::Model;
use crate::parallel::ExecMode;
use crate::report::{results_csv, results_table, ResultRow};
use crate::saliency::SaliencyMethod;
use crate::trainer::{attach_baseline_ssim, evaluate, train, SampleEval, TrainConfig};

#[derive(Debug, Clone)]
pub struct ReproduceOptions {
    pub classes: Vec<ShapeClass>,
    pub image_size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise_level: f32,
    pub distractor: bool,
    pub data_seed: u64,
    /// Model-initialization seeds; one full arm sweep runs per entry.
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub lambda: f32,
    pub ce_norm: CeNormalization,
    pub tau: f32,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        Self {
            classes: ShapeClass::ALL.to_vec(),
            image_size: 32,
            train_per_class: 50,
            test_per_class: 25,
            noise_level: 0.1,
            distractor: true,
            data_seed: 1000,
            seeds: vec![0, 1, 2, 3, 4],
            epochs: 32,
            batch_size: 16,
            lr: 0.01,
            lambda: 0.9,
            ce_norm: CeNormalization::DivideByClassCount,
            tau: 0.5,
        }
    }
}

/// The seven training arms, in reporting order after the baseline.
const TRUSTWORTHY_ARMS: [(SaliencyMethod, AblationMode); 6] = [
    (SaliencyMethod::GradCam, AblationMode::Full),
    (SaliencyMethod::GradCam, AblationMode::R1Zero),
    (SaliencyMethod::GradCam, AblationMode::R2Zero),
    (SaliencyMethod::GuidedGradCam, AblationMode::Full),
    (SaliencyMethod::GuidedGradCam, AblationMode::R1Zero),
    (SaliencyMethod::GuidedGradCam, AblationMode::R2Zero),
];

/// Mean SSIM-vs-baseline of the three ablation arms of one method, with the
/// directional expectation r2zero >= full >= r1zero.
#[derive(Debug, Clone)]
pub struct SsimOrdering {
    pub method: SaliencyMethod,
    pub r2zero: f64,
    pub full: f64,
    pub r1zero: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ReproduceSummary {
    /// Eight rows: the baseline under both methods, then the six trustworthy
    /// arms; every value is a mean over seeds.
    pub rows: Vec<ResultRow>,
    pub csv: String,
    pub table: String,
    pub ssim_ordering: Vec<SsimOrdering>,
    pub seed_count: usize,
}

impl ReproduceSummary {
    pub fn row(&self, loss_kind: &str, method: &str, ablation: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.loss_kind == loss_kind && r.method == method && r.ablation == ablation)
    }
}

#[derive(Default, Clone)]
struct Accumulator {
    accuracy: f64,
    precision: f64,
    recall: f64,
    cases: [f64; 4],
    energy: f64,
    ssim: f64,
    n: usize,
}

impl Accumulator {
    fn add(&mut self, report: &crate::metrics::MetricsReport) {
        self.accuracy += report.accuracy;
        self.precision += report.precision;
        self.recall += report.recall;
        for (acc, v) in self.cases.iter_mut().zip(report.case_fractions.iter()) {
            *acc += v;
        }
        self.energy += report.energy_in_mask;
        self.ssim += report.mean_ssim_vs_baseline.expect("ssim attached before aggregation");
        self.n += 1;
    }

    fn row(&self, lr: f32, lambda: f32, loss: &str, method: &str, ablation: &str) -> ResultRow {
        let n = self.n as f64;
        ResultRow {
            lr,
            lambda,
            loss_kind: loss.to_string(),
            method: method.to_string(),
            ablation: ablation.to_string(),
            accuracy: self.accuracy / n,
            precision: self.precision / n,
            recall: self.recall / n,
            cases: self.cases.map(|c| c / n),
            energy_in_mask: self.energy / n,
            ssim_vs_baseline: self.ssim / n,
        }
    }
}

fn shapes_config(opts: &ReproduceOptions, per_class: usize, seed: u64) -> ShapesConfig {
    ShapesConfig {
        classes: opts.classes.clone(),
        image_size: opts.image_size,
        samples_per_class: per_class,
        noise_level: opts.noise_level,
        distractor: opts.distractor,
        seed,
    }
}

fn train_config(opts: &ReproduceOptions, seed: u64, loss: LossKind, method: SaliencyMethod, ablation: AblationMode) -> TrainConfig {
    TrainConfig {
        loss,
        method,
        lambda: opts.lambda,
        lr: opts.lr,
        epochs: opts.epochs,
        batch_size: opts.batch_size,
        ablation,
        seed,
        ce_norm: opts.ce_norm,
    }
}

/// Runs the full suite: seeds x (baseline + six trustworthy arms), evaluates
/// everything on a held-out test set, and aggregates into the consolidated
/// table. Deterministic: equal options give byte-identical CSV text.
pub fn reproduce(opts: &ReproduceOptions, mode: ExecMode) -> Result<ReproduceSummary> {
    if opts.seeds.is_empty() {
        return Err(Error::InvalidConfig("reproduce needs at least one seed".into()));
    }
    let train_data = gen_shapes(&shapes_config(opts, opts.train_per_class, opts.data_seed))?;
    let test_data = gen_shapes(&shapes_config(opts, opts.test_per_class, opts.data_seed + 1))?;
    let class_count = opts.classes.len();

    // accumulators in reporting order: baseline x 2 methods, then the arms
    let mut baseline_acc =
        [Accumulator::default(), Accumulator::default()];
    let mut arm_acc: Vec<Accumulator> = vec![Accumulator::default(); TRUSTWORTHY_ARMS.len()];
    let eval_methods = [SaliencyMethod::GradCam, SaliencyMethod::GuidedGradCam];

    for &seed in &opts.seeds {
        let init = Model::small_cnn(class_count, opts.image_size, seed)?;

        let base_cfg = train_config(
            opts,
            seed,
            LossKind::CrossEntropyOnly,
            SaliencyMethod::GradCam,
            AblationMode::Full,
        );
        let (baseline, _) = train(init.clone(), &train_data, &base_cfg, mode)?;

        let mut baseline_evals: Vec<Vec<SampleEval>> = Vec::with_capacity(2);
        for (mi, &method) in eval_methods.iter().enumerate() {
            let (mut report, evals) = evaluate(&baseline, &test_data, method, opts.tau, mode)?;
            attach_baseline_ssim(&mut report, &evals, &evals)?;
            baseline_acc[mi].add(&report);
            baseline_evals.push(evals);
        }

        for (ai, &(method, ablation)) in TRUSTWORTHY_ARMS.iter().enumerate() {
            let cfg = train_config(opts, seed, LossKind::Trustworthy, method, ablation);
            let (model, _) = train(init.clone(), &train_data, &cfg, mode)?;
            let (mut report, evals) = evaluate(&model, &test_data, method, opts.tau, mode)?;
            let base_evals = &baseline_evals[eval_methods
                .iter()
                .position(|&m| m == method)
                .expect("method is one of the two")];
            attach_baseline_ssim(&mut report, &evals, base_evals)?;
            arm_acc[ai].add(&report);
        }
    }

    let mut rows = Vec::with_capacity(2 + TRUSTWORTHY_ARMS.len());
    for (mi, &method) in eval_methods.iter().enumerate() {
        rows.push(baseline_acc[mi].row(opts.lr, 1.0, LossKind::CrossEntropyOnly.as_str(), method.as_str(), AblationMode::Full.as_str()));
    }
    for (ai, &(method, ablation)) in TRUSTWORTHY_ARMS.iter().enumerate() {
        rows.push(arm_acc[ai].row(
            opts.lr,
            opts.lambda,
            LossKind::Trustworthy.as_str(),
            method.as_str(),
            ablation.as_str(),
        ));
    }

    let ssim_ordering = eval_methods
        .iter()
        .map(|&method| {
            let find = |ablation: AblationMode| {
                rows.iter()
                    .find(|r| {
                        r.loss_kind == LossKind::Trustworthy.as_str()
                            && r.method == method.as_str()
                            && r.ablation == ablation.as_str()
                    })
                    .expect("all arms present")
                    .ssim_vs_baseline
            };
            let (r2zero, full, r1zero) =
                (find(AblationMode::R2Zero), find(AblationMode::Full), find(AblationMode::R1Zero));
            SsimOrdering { method, r2zero, full, r1zero, pass: r2zero >= full && full >= r1zero }
        })
        .collect();

    Ok(ReproduceSummary {
        csv: results_csv(&rows),
        table: results_table(&rows),
        rows,
        ssim_ordering,
        seed_count: opts.seeds.len(),
    })
}
