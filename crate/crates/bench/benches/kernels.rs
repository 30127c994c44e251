//! Criterion benchmarks over the hot paths: the mini forward pass, a full
//! training step, attribute oracles, mAP ranking, synthetic rendering, and
//! heatmap upsampling.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use a4net::data::synthetic::render_sample;
use a4net::data::SyntheticSpec;
use a4net::explain::{upsample, Heatmap};
use a4net::model::{A4Net, AttributeSet, ModelConfig, Targets};
use a4net::tensor::{Tape, Tensor};
use a4net::train::mean_average_precision;

fn rand_image(rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let values: Vec<f32> = (0..3 * 64 * 64).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::from_shape_vec(IxDyn(&[3, 64, 64]), values).expect("image shape")
}

fn forward_eval_mini(c: &mut Criterion) {
    let model: A4Net<f32> = A4Net::new(ModelConfig::mini(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let image = rand_image(&mut rng);
    let mut group = c.benchmark_group("model");
    group.sample_size(20);
    group.bench_function("forward_eval_mini", |b| {
        b.iter(|| model.forward_eval(&image, AttributeSet::ALL).unwrap())
    });
    group.finish();
}

fn train_step_mini(c: &mut Criterion) {
    let model: A4Net<f32> = A4Net::new(ModelConfig::mini(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let image = rand_image(&mut rng);
    let targets = Targets {
        emotion: 1,
        brightness: Some(0.4),
        colorfulness: Some(0.6),
        scene: Some(2),
        facial_expression: Some(0),
    };
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    group.bench_function("forward_backward_mini", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let graph = model
                .forward_sample(&mut tape, &image, AttributeSet::ALL, None)
                .unwrap();
            let losses = model.sample_losses(&mut tape, &graph, &targets).unwrap();
            let terms = [
                (losses.ve, 1.0),
                (losses.b.unwrap(), 1.0),
                (losses.c.unwrap(), 1.0),
                (losses.s.unwrap(), 1.0),
                (losses.fe.unwrap(), 1.0),
            ];
            let total = tape.combine(&terms).unwrap();
            tape.backward_scalar(total).unwrap();
            tape.scalar_value(total)
        })
    });
    group.finish();
}

fn attribute_oracles(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let image = image::RgbImage::from_fn(64, 64, |_, _| {
        image::Rgb([rng.gen(), rng.gen(), rng.gen()])
    });
    c.bench_function("colorfulness_64", |b| {
        b.iter(|| a4net::data::compute_colorfulness(&image).unwrap())
    });
    c.bench_function("brightness_64", |b| {
        b.iter(|| a4net::data::compute_brightness(&image).unwrap())
    });
}

fn map_ranking(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scores: Vec<Vec<f64>> = (0..1000)
        .map(|_| (0..8).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let labels: Vec<Vec<bool>> = (0..1000)
        .map(|_| (0..8).map(|_| rng.gen_bool(0.3)).collect())
        .collect();
    c.bench_function("map_1000x8", |b| {
        b.iter(|| mean_average_precision(&scores, &labels).unwrap())
    });
}

fn synthetic_render(c: &mut Criterion) {
    let spec = SyntheticSpec::mini(1, 6);
    c.bench_function("render_sample_64", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(7),
            |mut rng| render_sample(&spec, (1, 1, 2, 1), &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn heatmap_upsample(c: &mut Criterion) {
    let map = Heatmap {
        values: vec![0.1, 0.9, 0.4, 0.6],
        height: 2,
        width: 2,
        source_height: 2,
        source_width: 2,
    };
    c.bench_function("upsample_2x2_to_64", |b| b.iter(|| upsample(&map, 64, 64)));
}

criterion_group!(
    benches,
    forward_eval_mini,
    train_step_mini,
    attribute_oracles,
    map_ranking,
    synthetic_render,
    heatmap_upsample
);
criterion_main!(benches);
