//! Flag parsing and the JSON config file.
//!
//! Every tunable can be set in a JSON config file (`--config`) or by a flag;
//! flags win, file values fill in next, and built-in defaults cover the
//! rest. Unknown config keys are rejected so typos fail loudly instead of
//! silently running defaults.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use trustcnn::data::{ShapeClass, ShapesConfig};
use trustcnn::{Error, ReproduceOptions, Result, SaliencyMethod, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "trustcnn", version, about = "Saliency-aware CNN training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic shapes dataset (PGM images, masks, manifest).
    Gen(GenArgs),
    /// Train a model on a generated dataset and write a checkpoint.
    Train(TrainArgs),
    /// Export per-sample saliency maps from a checkpoint as PGM files.
    Saliency(SaliencyArgs),
    /// Compare two checkpoints on one dataset (metrics + mean SSIM).
    Compare(CompareArgs),
    /// Run the full multi-seed baseline-versus-trustworthy suite.
    Reproduce(ReproduceArgs),
}

/// JSON config file contents; a strict subset of the flag surface.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub classes: Option<Vec<String>>,
    pub image_size: Option<usize>,
    pub n: Option<usize>,
    pub test_n: Option<usize>,
    pub noise: Option<f32>,
    pub distractor: Option<bool>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub loss: Option<String>,
    pub method: Option<String>,
    pub lambda: Option<f32>,
    pub lr: Option<f32>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub ablation: Option<String>,
    pub ce_norm: Option<String>,
    pub tau: Option<f32>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

impl FileConfig {
    /// Loads the config file if a path was given; a missing path is an I/O
    /// error, malformed JSON or unknown keys are usage errors.
    pub fn load(path: Option<&PathBuf>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn parse_with<T: FromStr<Err = Error>>(value: Option<String>, default: T) -> Result<T> {
    value.map(|s| s.parse()).transpose().map(|v| v.unwrap_or(default))
}

fn parse_classes(names: Option<Vec<String>>) -> Result<Option<Vec<ShapeClass>>> {
    names.map(|list| list.iter().map(|s| s.parse()).collect()).transpose()
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated class list (square, circle, triangle, cross).
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Samples per class.
    #[arg(long)]
    pub n: Option<usize>,
    /// Square image side length in pixels.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Background noise ceiling in [0, 1).
    #[arg(long)]
    pub noise: Option<f32>,
    /// Add a bright off-object distractor patch to every image.
    #[arg(long)]
    pub distractor: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl GenArgs {
    pub fn resolve(self) -> Result<(ShapesConfig, PathBuf)> {
        let file = FileConfig::load(self.config.as_ref())?;
        let defaults = ShapesConfig::default();
        let classes = parse_classes(self.classes)?
            .or(parse_classes(file.classes)?)
            .unwrap_or(defaults.classes);
        let cfg = ShapesConfig {
            classes,
            image_size: pick(self.image_size, file.image_size, defaults.image_size),
            samples_per_class: pick(self.n, file.n, defaults.samples_per_class),
            noise_level: pick(self.noise, file.noise, defaults.noise_level),
            distractor: pick(self.distractor, file.distractor, defaults.distractor),
            seed: pick(self.seed, file.seed, defaults.seed),
        };
        let out = pick(self.out, file.out, PathBuf::from("dataset"));
        Ok((cfg, out))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory produced by `gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Loss: ce, trustworthy or trustworthy-pwce.
    #[arg(long)]
    pub loss: Option<String>,
    /// Saliency method driving the loss: gradcam or guided-gradcam.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub lambda: Option<f32>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Interaction-penalty ablation: full, r1zero or r2zero.
    #[arg(long)]
    pub ablation: Option<String>,
    /// Cross-entropy normalization: classcount or logclasscount.
    #[arg(long)]
    pub ce_norm: Option<String>,
    /// Saliency accuracy threshold for the end-of-run summary.
    #[arg(long)]
    pub tau: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for the checkpoint and loss log.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl TrainArgs {
    pub fn resolve(self) -> Result<(PathBuf, TrainConfig, f32, PathBuf)> {
        let file = FileConfig::load(self.config.as_ref())?;
        let defaults = TrainConfig::default();
        let cfg = TrainConfig {
            loss: parse_with(self.loss.or(file.loss.clone()), defaults.loss)?,
            method: parse_with(self.method.or(file.method.clone()), defaults.method)?,
            lambda: pick(self.lambda, file.lambda, defaults.lambda),
            lr: pick(self.lr, file.lr, defaults.lr),
            epochs: pick(self.epochs, file.epochs, defaults.epochs),
            batch_size: pick(self.batch, file.batch, defaults.batch_size),
            ablation: parse_with(self.ablation.or(file.ablation.clone()), defaults.ablation)?,
            seed: pick(self.seed, file.seed, defaults.seed),
            ce_norm: parse_with(self.ce_norm.or(file.ce_norm.clone()), defaults.ce_norm)?,
        };
        let data = self
            .data
            .or(file.data)
            .ok_or_else(|| Error::InvalidConfig("train needs --data <dataset dir>".into()))?;
        let tau = pick(self.tau, file.tau, 0.5);
        let out = pick(self.out, file.out, PathBuf::from("run"));
        Ok((data, cfg, tau, out))
    }
}

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory produced by `gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// gradcam, guided-backprop or guided-gradcam.
    #[arg(long)]
    pub method: Option<String>,
    /// Saliency accuracy threshold for the sidecar case labels.
    #[arg(long)]
    pub tau: Option<f32>,
    /// Output directory for PGM maps and the sidecar CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SaliencyArgs {
    pub fn resolve(self) -> Result<(PathBuf, PathBuf, SaliencyMethod, f32, PathBuf)> {
        let file = FileConfig::load(self.config.as_ref())?;
        let method = parse_with(self.method.or(file.method.clone()), SaliencyMethod::GradCam)?;
        let data = self
            .data
            .or(file.data)
            .ok_or_else(|| Error::InvalidConfig("saliency needs --data <dataset dir>".into()))?;
        let tau = pick(self.tau, file.tau, 0.5);
        let out = pick(self.out, file.out, PathBuf::from("saliency"));
        Ok((self.checkpoint, data, method, tau, out))
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// First checkpoint (the reference for SSIM).
    #[arg(long)]
    pub a: PathBuf,
    /// Second checkpoint.
    #[arg(long)]
    pub b: PathBuf,
    /// Dataset directory produced by `gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// gradcam, guided-backprop or guided-gradcam.
    #[arg(long)]
    pub method: Option<String>,
    /// Saliency accuracy threshold for the case tables.
    #[arg(long)]
    pub tau: Option<f32>,
}

impl CompareArgs {
    pub fn resolve(self) -> Result<(PathBuf, PathBuf, PathBuf, SaliencyMethod, f32)> {
        let file = FileConfig::load(self.config.as_ref())?;
        let method = parse_with(self.method.or(file.method.clone()), SaliencyMethod::GradCam)?;
        let data = self
            .data
            .or(file.data)
            .ok_or_else(|| Error::InvalidConfig("compare needs --data <dataset dir>".into()))?;
        let tau = pick(self.tau, file.tau, 0.5);
        Ok((self.a, self.b, data, method, tau))
    }
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated class list (square, circle, triangle, cross).
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Training samples per class.
    #[arg(long)]
    pub n: Option<usize>,
    /// Test samples per class.
    #[arg(long)]
    pub test_n: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub noise: Option<f32>,
    #[arg(long)]
    pub distractor: Option<bool>,
    /// Dataset seed; model seeds come from --seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated model-initialization seeds, one arm sweep each.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub lambda: Option<f32>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Cross-entropy normalization: classcount or logclasscount.
    #[arg(long)]
    pub ce_norm: Option<String>,
    /// Saliency accuracy threshold for the four-case breakdown.
    #[arg(long)]
    pub tau: Option<f32>,
    /// Output directory for the results CSV and table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ReproduceArgs {
    pub fn resolve(self) -> Result<(ReproduceOptions, PathBuf)> {
        let file = FileConfig::load(self.config.as_ref())?;
        let defaults = ReproduceOptions::default();
        let classes = parse_classes(self.classes)?
            .or(parse_classes(file.classes)?)
            .unwrap_or(defaults.classes);
        let opts = ReproduceOptions {
            classes,
            image_size: pick(self.image_size, file.image_size, defaults.image_size),
            train_per_class: pick(self.n, file.n, defaults.train_per_class),
            test_per_class: pick(self.test_n, file.test_n, defaults.test_per_class),
            noise_level: pick(self.noise, file.noise, defaults.noise_level),
            distractor: pick(self.distractor, file.distractor, defaults.distractor),
            data_seed: pick(self.seed, file.seed, defaults.data_seed),
            seeds: pick(self.seeds, file.seeds, defaults.seeds),
            epochs: pick(self.epochs, file.epochs, defaults.epochs),
            batch_size: pick(self.batch, file.batch, defaults.batch_size),
            lr: pick(self.lr, file.lr, defaults.lr),
            lambda: pick(self.lambda, file.lambda, defaults.lambda),
            ce_norm: parse_with(self.ce_norm.or(file.ce_norm.clone()), defaults.ce_norm)?,
            tau: pick(self.tau, file.tau, defaults.tau),
        };
        let out = pick(self.out, file.out, PathBuf::from("reproduce"));
        Ok((opts, out))
    }
}
