//! Sequential versus data-parallel throughput on the two hot paths:
//! batch gradient computation and test-set evaluation.
//!
//! Run with `cargo bench` (parallel backend) and
//! `cargo bench --no-default-features` (sequential-only build) to compare;
//! within a default build the `seq`/`par` pairs compare the two modes
//! directly. `TRUSTCNN_THREADS` caps the pool.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use trustcnn::data::{gen_shapes, LabeledExample, ShapeClass, ShapesConfig};
use trustcnn::loss::{batch_loss_and_grads, LossConfig};
use trustcnn::model::Model;
use trustcnn::parallel::ExecMode;
use trustcnn::saliency::SaliencyMethod;
use trustcnn::trainer::evaluate;

fn dataset(samples_per_class: usize) -> Vec<LabeledExample> {
    gen_shapes(&ShapesConfig {
        classes: vec![ShapeClass::Square, ShapeClass::Circle],
        image_size: 16,
        samples_per_class,
        noise_level: 0.1,
        distractor: true,
        seed: 11,
    })
    .expect("generation succeeds")
}

fn bench_batch_grads(c: &mut Criterion) {
    let model = Model::small_cnn(2, 16, 0).expect("model builds");
    let data = dataset(8);
    let batch: Vec<&LabeledExample> = data.iter().collect();
    let cfg = LossConfig::default();

    let mut group = c.benchmark_group("batch_grads_16");
    group.sample_size(10);
    for (name, mode) in [("seq", ExecMode::Sequential), ("par", ExecMode::Parallel)] {
        group.bench_function(name, |b| {
            b.iter(|| batch_loss_and_grads(&model, black_box(&batch), &cfg, mode).unwrap())
        });
    }
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let model = Model::small_cnn(2, 16, 0).expect("model builds");
    let data = dataset(8);

    let mut group = c.benchmark_group("evaluate_16");
    group.sample_size(10);
    for (name, mode) in [("seq", ExecMode::Sequential), ("par", ExecMode::Parallel)] {
        group.bench_function(name, |b| {
            b.iter(|| {
                evaluate(&model, black_box(&data), SaliencyMethod::GradCam, 0.5, mode).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_batch_grads, bench_evaluate);
criterion_main!(benches);
