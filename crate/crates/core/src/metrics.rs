//! Evaluation metrics: global SSIM between maps, macro-averaged
//! classification metrics, the automated saliency-accuracy criterion, and
//! the four-case prediction/saliency taxonomy with binomial intervals.

use crate::error::{Error, Result};
use crate::saliency::{MapState, SaliencyMap};
use crate::tensor::Tensor;

/// Default energy-ratio threshold for calling a map accurate.
pub const DEFAULT_TAU: f32 = 0.5;

/// Global (single-window) structural similarity with stabilizers
/// c1 = (0.01 L)^2 and c2 = (0.03 L)^2. Statistics are population (1/N)
/// moments accumulated in f64, so identical inputs score exactly 1.
pub fn ssim(x: &[f32], y: &[f32], dynamic_range: f64) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::ShapeMismatch {
            context: "ssim".into(),
            expected: format!("two non-empty images of equal size, lhs has {}", x.len()),
            actual: format!("{}", y.len()),
        });
    }
    if dynamic_range <= 0.0 {
        return Err(Error::DynamicRange { value: dynamic_range });
    }
    let n = x.len() as f64;
    let mean = |v: &[f32]| v.iter().map(|&a| f64::from(a)).sum::<f64>() / n;
    let mx = mean(x);
    let my = mean(y);
    let (mut vx, mut vy, mut cov) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.iter().zip(y.iter()) {
        let da = f64::from(a) - mx;
        let db = f64::from(b) - my;
        vx += da * da;
        vy += db * db;
        cov += da * db;
    }
    vx /= n;
    vy /= n;
    cov /= n;
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    Ok(((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
}

/// SSIM between two normalized saliency maps (dynamic range 1).
pub fn ssim_maps(a: &SaliencyMap, b: &SaliencyMap) -> Result<f64> {
    if a.state() != MapState::Normalized || b.state() != MapState::Normalized {
        return Err(Error::MapNotNormalized);
    }
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::ShapeMismatch {
            context: "ssim_maps".into(),
            expected: format!("{}x{}", a.height(), a.width()),
            actual: format!("{}x{}", b.height(), b.width()),
        });
    }
    ssim(a.values(), b.values(), 1.0)
}

/// Accuracy plus macro-averaged precision and recall. A class with no true
/// instances (or no predicted instances, for precision) contributes zero to
/// its macro average and is recorded in `warnings`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub warnings: Vec<String>,
}

pub fn classification_metrics(preds: &[usize], truths: &[usize]) -> Result<ClassificationMetrics> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::InvalidConfig(format!(
            "classification metrics need equal non-empty prediction/truth lists, got {} and {}",
            preds.len(),
            truths.len()
        )));
    }
    let class_count = preds.iter().chain(truths.iter()).max().unwrap() + 1;
    let mut tp = vec![0usize; class_count];
    let mut pred_n = vec![0usize; class_count];
    let mut truth_n = vec![0usize; class_count];
    let mut correct = 0usize;
    for (&p, &t) in preds.iter().zip(truths.iter()) {
        pred_n[p] += 1;
        truth_n[t] += 1;
        if p == t {
            tp[p] += 1;
            correct += 1;
        }
    }
    let mut warnings = Vec::new();
    let (mut precision, mut recall) = (0.0f64, 0.0f64);
    for c in 0..class_count {
        if pred_n[c] == 0 {
            warnings.push(format!("class {c} never predicted; counted as precision 0"));
        } else {
            precision += tp[c] as f64 / pred_n[c] as f64;
        }
        if truth_n[c] == 0 {
            warnings.push(format!("class {c} absent from truths; counted as recall 0"));
        } else {
            recall += tp[c] as f64 / truth_n[c] as f64;
        }
    }
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / preds.len() as f64,
        precision: precision / class_count as f64,
        recall: recall / class_count as f64,
        warnings,
    })
}

fn check_mask(map: &SaliencyMap, mask: &Tensor) -> Result<()> {
    if map.state() != MapState::Normalized {
        return Err(Error::MapNotNormalized);
    }
    if mask.shape() != [map.height(), map.width()] {
        return Err(Error::ShapeMismatch {
            context: "saliency mask".into(),
            expected: format!("[{}, {}]", map.height(), map.width()),
            actual: format!("{:?}", mask.shape()),
        });
    }
    for &v in mask.data() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::InvalidConfig(format!("mask must be binary, found {v}")));
        }
    }
    if mask.data().iter().all(|&v| v == 0.0) {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// Fraction of the map's total energy that falls inside the mask.
/// An all-zero map has ratio zero by definition.
pub fn energy_in_mask(map: &SaliencyMap, mask: &Tensor) -> Result<f64> {
    check_mask(map, mask)?;
    let mut inside = 0.0f64;
    let mut total = 0.0f64;
    for (&v, &m) in map.values().iter().zip(mask.data().iter()) {
        total += f64::from(v);
        if m == 1.0 {
            inside += f64::from(v);
        }
    }
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(inside / total)
}

/// The automated stand-in for human map judgment: accurate iff at least
/// `tau` of the map's energy lies inside the object mask (boundary
/// inclusive). Invariant to positive rescaling of the map.
pub fn saliency_accurate(map: &SaliencyMap, mask: &Tensor, tau: f32) -> Result<bool> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidConfig(format!("tau must lie strictly inside (0, 1), got {tau}")));
    }
    let ratio = energy_in_mask(map, mask)?;
    if map.values().iter().all(|&v| v == 0.0) {
        return Ok(false);
    }
    Ok(ratio >= f64::from(tau))
}

/// The four prediction/saliency cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseLabel {
    /// Correct prediction, accurate map.
    Case1,
    /// Incorrect prediction, accurate map.
    Case2,
    /// Correct prediction, inaccurate map.
    Case3,
    /// Incorrect prediction, inaccurate map.
    Case4,
}

impl CaseLabel {
    pub fn index(&self) -> usize {
        match self {
            CaseLabel::Case1 => 0,
            CaseLabel::Case2 => 1,
            CaseLabel::Case3 => 2,
            CaseLabel::Case4 => 3,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CaseLabel::Case1 => "case1",
            CaseLabel::Case2 => "case2",
            CaseLabel::Case3 => "case3",
            CaseLabel::Case4 => "case4",
        }
    }
}

pub fn case_of(pred: usize, truth: usize, map_accurate: bool) -> CaseLabel {
    match (pred == truth, map_accurate) {
        (true, true) => CaseLabel::Case1,
        (false, true) => CaseLabel::Case2,
        (true, false) => CaseLabel::Case3,
        (false, false) => CaseLabel::Case4,
    }
}

/// Case fractions with 95% normal-approximation binomial intervals,
/// p ± 1.96 sqrt(p(1-p)/n), clamped to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CaseBreakdown {
    pub counts: [usize; 4],
    pub fractions: [f64; 4],
    pub intervals: [(f64, f64); 4],
    pub n: usize,
}

pub fn binomial_interval(p: f64, n: usize) -> (f64, f64) {
    let half = 1.96 * (p * (1.0 - p) / n as f64).sqrt();
    ((p - half).max(0.0), (p + half).min(1.0))
}

pub fn case_breakdown(cases: &[CaseLabel]) -> Result<CaseBreakdown> {
    if cases.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts = [0usize; 4];
    for case in cases {
        counts[case.index()] += 1;
    }
    let n = cases.len();
    let fractions = counts.map(|c| c as f64 / n as f64);
    let intervals = fractions.map(|p| binomial_interval(p, n));
    Ok(CaseBreakdown { counts, fractions, intervals, n })
}

/// Aggregate evaluation report for one model on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub case_fractions: [f64; 4],
    pub case_intervals: [(f64, f64); 4],
    pub sample_count: usize,
    /// Mean per-sample energy-in-mask ratio.
    pub energy_in_mask: f64,
    /// Mean SSIM against a reference model's maps; set by comparison steps.
    pub mean_ssim_vs_baseline: Option<f64>,
}
