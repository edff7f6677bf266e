//! Ignored timing probes for sizing the experiment suite; run with
//! `cargo test --test timing -- --ignored --nocapture`.

use trustcnn::experiments::{reproduce, ReproduceOptions};
use trustcnn::parallel::ExecMode;

#[test]
#[ignore]
fn time_reproduce_scaling() {
    for epochs in [1, 2] {
        let opts = ReproduceOptions { seeds: vec![0], epochs, ..Default::default() };
        let t0 = std::time::Instant::now();
        let summary = reproduce(&opts, ExecMode::Parallel).unwrap();
        println!(
            "one seed, {epochs} epoch(s): {:?} (accuracy of trustworthy/ggc/full row: {:.3})",
            t0.elapsed(),
            summary.rows[5].accuracy
        );
    }
}

#[test]
#[ignore]
fn probe_lr_sensitivity() {
    use trustcnn::data::{gen_shapes, ShapeClass, ShapesConfig};
    use trustcnn::loss::LossKind;
    use trustcnn::model::Model;
    use trustcnn::saliency::SaliencyMethod;
    use trustcnn::trainer::{evaluate, train, TrainConfig};

    let data_cfg = ShapesConfig {
        classes: ShapeClass::ALL.to_vec(),
        image_size: 32,
        samples_per_class: 50,
        noise_level: 0.1,
        distractor: true,
        seed: 1000,
    };
    let train_data = gen_shapes(&data_cfg).unwrap();
    let test_data = gen_shapes(&ShapesConfig {
        samples_per_class: 25,
        seed: 1001,
        ..data_cfg.clone()
    })
    .unwrap();

    for lr in [0.01f32, 0.05, 0.2, 0.5] {
        let model = Model::small_cnn(4, 32, 0).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::CrossEntropyOnly,
            lr,
            epochs: 20,
            batch_size: 16,
            seed: 0,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let (trained, log) = train(model, &train_data, &cfg, ExecMode::Parallel).unwrap();
        let (report, _) =
            evaluate(&trained, &test_data, SaliencyMethod::GradCam, 0.5, ExecMode::Parallel)
                .unwrap();
        println!(
            "lr {lr}: ce {:.4} -> {:.4}, test acc {:.3} ({:?})",
            log.first().unwrap().ce,
            log.last().unwrap().ce,
            report.accuracy,
            t0.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_full_reproduce() {
    let opts = ReproduceOptions::default();
    let t0 = std::time::Instant::now();
    let summary = reproduce(&opts, ExecMode::Parallel).unwrap();
    println!("full default reproduce: {:?}", t0.elapsed());
    println!("{}", summary.table);
    for o in &summary.ssim_ordering {
        println!(
            "{}: r2zero {:.3} >= full {:.3} >= r1zero {:.3} -> {}",
            o.method.as_str(),
            o.r2zero,
            o.full,
            o.r1zero,
            if o.pass { "pass" } else { "warn" }
        );
    }
    let base = summary.row("ce", "guided-gradcam", "full").unwrap();
    let tw = summary.row("trustworthy", "guided-gradcam", "full").unwrap();
    println!(
        "crit6: acc {:.4} vs base {:.4} (>= base-0.01: {}), energy {:.4} > {:.4}: {}, case3 {:.4} < {:.4}: {}",
        tw.accuracy,
        base.accuracy,
        tw.accuracy >= base.accuracy - 0.01,
        tw.energy_in_mask,
        base.energy_in_mask,
        tw.energy_in_mask > base.energy_in_mask,
        tw.cases[2],
        base.cases[2],
        tw.cases[2] < base.cases[2]
    );
}

#[test]
#[ignore]
fn probe_feasibility_grid() {
    use trustcnn::data::{gen_shapes, ShapeClass, ShapesConfig};
    use trustcnn::loss::LossKind;
    use trustcnn::model::Model;
    use trustcnn::saliency::SaliencyMethod;
    use trustcnn::trainer::{evaluate, train, TrainConfig};

    let two = vec![ShapeClass::Square, ShapeClass::Circle];
    let four = ShapeClass::ALL.to_vec();
    for (classes, batch, epochs) in [
        (&two, 8usize, 40usize),
        (&two, 8, 80),
        (&two, 4, 40),
        (&four, 8, 40),
    ] {
        let data_cfg = ShapesConfig {
            classes: classes.clone(),
            image_size: 32,
            samples_per_class: 50,
            noise_level: 0.1,
            distractor: true,
            seed: 1000,
        };
        let train_data = gen_shapes(&data_cfg).unwrap();
        let test_data = gen_shapes(&ShapesConfig {
            samples_per_class: 25,
            seed: 1001,
            ..data_cfg.clone()
        })
        .unwrap();
        let model = Model::small_cnn(classes.len(), 32, 0).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::CrossEntropyOnly,
            lr: 0.01,
            epochs,
            batch_size: batch,
            seed: 0,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let (trained, log) = train(model, &train_data, &cfg, ExecMode::Parallel).unwrap();
        let (report, _) =
            evaluate(&trained, &test_data, SaliencyMethod::GradCam, 0.5, ExecMode::Parallel)
                .unwrap();
        println!(
            "{} classes, batch {batch}, {epochs} epochs: ce {:.4} -> {:.4}, test acc {:.3} ({:?})",
            classes.len(),
            log.first().unwrap().ce,
            log.last().unwrap().ce,
            report.accuracy,
            t0.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_learning_trajectory() {
    for (epochs, batch) in [(20, 16), (40, 16)] {
        let opts = ReproduceOptions {
            seeds: vec![0],
            epochs,
            batch_size: batch,
            ..Default::default()
        };
        let t0 = std::time::Instant::now();
        let s = reproduce(&opts, ExecMode::Parallel).unwrap();
        println!("epochs {epochs} batch {batch}: {:?}", t0.elapsed());
        for r in &s.rows {
            println!(
                "  {:>12}/{:<14}/{:<6} acc {:.3} energy {:.3} case3 {:.3} ssim {:.3}",
                r.loss_kind, r.method, r.ablation, r.accuracy, r.energy_in_mask, r.cases[2], r.ssim_vs_baseline
            );
        }
    }
}
