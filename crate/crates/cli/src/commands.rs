//! Command implementations. Each one resolves its options, drives the
//! library, writes artifacts under the chosen output directory, and prints a
//! short deterministic summary so reruns are byte-identical.

use std::fs;
use std::path::Path;

use trustcnn::data::{class_count, gen_shapes, load_dataset, write_dataset, write_pgm, LabeledExample, ShapesConfig};
use trustcnn::trainer::{compare_models, evaluate, train, CompareReport, TrainConfig};
use trustcnn::{checkpoint, report, reproduce};
use trustcnn::{Error, ExecMode, MetricsReport, Model, ReproduceOptions, Result, SaliencyMethod};

use crate::config::Command;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(args) => {
            let (cfg, out) = args.resolve()?;
            cmd_gen(&cfg, &out)
        }
        Command::Train(args) => {
            let (data, cfg, tau, out) = args.resolve()?;
            cmd_train(&data, &cfg, tau, &out)
        }
        Command::Saliency(args) => {
            let (ckpt, data, method, tau, out) = args.resolve()?;
            cmd_saliency(&ckpt, &data, method, tau, &out)
        }
        Command::Compare(args) => {
            let (a, b, data, method, tau) = args.resolve()?;
            cmd_compare(&a, &b, &data, method, tau)
        }
        Command::Reproduce(args) => {
            let (opts, out) = args.resolve()?;
            cmd_reproduce(&opts, &out)
        }
    }
}

/// The training architecture implied by a dataset: class count from the
/// labels, input resolution from the first sample.
fn model_for(data: &[LabeledExample], seed: u64) -> Result<Model> {
    let Some(first) = data.first() else { return Err(Error::EmptyDataset) };
    Model::small_cnn(class_count(data), first.height(), seed)
}

fn cmd_gen(cfg: &ShapesConfig, out: &Path) -> Result<()> {
    let examples = gen_shapes(cfg)?;
    let manifest = write_dataset(out, &examples)?;
    println!("wrote {} samples under {}", examples.len(), out.display());
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_train(data_dir: &Path, cfg: &TrainConfig, tau: f32, out: &Path) -> Result<()> {
    let data = load_dataset(data_dir)?;
    let model = model_for(&data, cfg.seed)?;
    let (trained, log) = train(model, &data, cfg, ExecMode::Parallel)?;
    fs::create_dir_all(out)?;
    let ckpt = out.join("model.tcn1");
    checkpoint::save(&trained, &ckpt)?;
    fs::write(out.join("loss_log.csv"), report::loss_log_csv(&log))?;
    let (metrics, evals) = evaluate(&trained, &data, cfg.method, tau, ExecMode::Parallel)?;
    let mean_s_hat: f64 =
        evals.iter().map(|e| f64::from(e.s_hat)).sum::<f64>() / evals.len() as f64;
    println!("checkpoint: {}", ckpt.display());
    println!("final accuracy {:.4}, mean s_hat {:.4}", metrics.accuracy, mean_s_hat);
    Ok(())
}

fn cmd_saliency(
    ckpt: &Path,
    data_dir: &Path,
    method: SaliencyMethod,
    tau: f32,
    out: &Path,
) -> Result<()> {
    let data = load_dataset(data_dir)?;
    let arch = model_for(&data, 0)?;
    let model = checkpoint::load(ckpt, &arch)?;
    let (_, evals) = evaluate(&model, &data, method, tau, ExecMode::Parallel)?;
    fs::create_dir_all(out)?;
    for e in &evals {
        let name = format!("{:05}_{}_{}.pgm", e.id, method.as_str(), e.pred);
        let pixels: Vec<u8> = e
            .map
            .values()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        write_pgm(&out.join(name), e.map.width(), e.map.height(), &pixels)?;
    }
    fs::write(out.join("saliency.csv"), report::saliency_sidecar_csv(&evals))?;
    println!("wrote {} maps under {}", evals.len(), out.display());
    Ok(())
}

fn metrics_line(tag: &str, m: &MetricsReport) -> String {
    format!(
        "{tag}: accuracy {:.4}  precision {:.4}  recall {:.4}  energy_in_mask {:.4}\n",
        m.accuracy, m.precision, m.recall, m.energy_in_mask
    )
}

/// The textual comparison report: per-model metrics with case tables, then
/// the mean per-sample SSIM of model B's maps against model A's.
fn compare_text(cmp: &CompareReport, method: SaliencyMethod) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "method: {}, samples: {}\n",
        method.as_str(),
        cmp.report_a.sample_count
    ));
    out.push_str(&metrics_line("model a", &cmp.report_a));
    out.push_str(&report::case_table(&cmp.report_a));
    out.push_str(&metrics_line("model b", &cmp.report_b));
    out.push_str(&report::case_table(&cmp.report_b));
    out.push_str(&format!("mean ssim (b vs a): {:.6}\n", cmp.mean_ssim));
    out
}

fn cmd_compare(
    a: &Path,
    b: &Path,
    data_dir: &Path,
    method: SaliencyMethod,
    tau: f32,
) -> Result<()> {
    let data = load_dataset(data_dir)?;
    let arch = model_for(&data, 0)?;
    let model_a = checkpoint::load(a, &arch)?;
    let model_b = checkpoint::load(b, &arch)?;
    let cmp = compare_models(&model_a, &model_b, &data, method, tau, ExecMode::Parallel)?;
    print!("{}", compare_text(&cmp, method));
    Ok(())
}

fn cmd_reproduce(opts: &ReproduceOptions, out: &Path) -> Result<()> {
    let summary = reproduce(opts, ExecMode::Parallel)?;
    fs::create_dir_all(out)?;
    let csv_path = out.join("results.csv");
    fs::write(&csv_path, &summary.csv)?;
    fs::write(out.join("results.txt"), &summary.table)?;
    print!("{}", summary.table);
    for o in &summary.ssim_ordering {
        println!(
            "ssim ordering ({}): r2zero {:.4} >= full {:.4} >= r1zero {:.4} -> {}",
            o.method.as_str(),
            o.r2zero,
            o.full,
            o.r1zero,
            if o.pass { "pass" } else { "warn" }
        );
    }
    println!("results: {}", csv_path.display());
    Ok(())
}
