use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use lfa_core::data_io::synthetic_set;
use lfa_core::layers::{conv2d_backward, conv2d_forward, conv_transpose2d_forward, ConvGeom};
use lfa_core::{build_model, estimate_flops, model_forward, Mode, ModelConfig, Tensor, TrainRunConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn convolution(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::randn([1, 10, 128, 128], 1.0, &mut rng);
    let mut group = c.benchmark_group("conv2d");
    for (name, geom) in [
        ("pointwise", ConvGeom::new(10, 18, 1)),
        ("3x3", ConvGeom::new(10, 18, 3)),
        ("dilated", ConvGeom::new(10, 18, 3).with_dilation(2)),
    ] {
        let w = Tensor::randn(geom.weight_shape(), 0.1, &mut rng);
        let b = Tensor::zeros(geom.bias_shape());
        group.bench_function(BenchmarkId::new("forward", name), |bch| {
            bch.iter(|| conv2d_forward(black_box(&x), &w, &b, &geom).unwrap())
        });
        let g = conv2d_forward(&x, &w, &b, &geom).unwrap();
        group.bench_function(BenchmarkId::new("backward", name), |bch| {
            bch.iter(|| conv2d_backward(black_box(&x), &w, &geom, &g, true).unwrap())
        });
    }
    group.finish();

    let up = ConvGeom::upsample(35, 18, 2);
    let w = Tensor::randn(up.transposed_weight_shape(), 0.1, &mut rng);
    let b = Tensor::zeros(up.bias_shape());
    let low = Tensor::randn([1, 35, 64, 64], 1.0, &mut rng);
    c.bench_function("conv_transpose2d/upsample", |bch| {
        bch.iter(|| conv_transpose2d_forward(black_box(&low), &w, &b, &up).unwrap())
    });
}

fn model(c: &mut Criterion) {
    let model = build_model(&ModelConfig::default(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    for size in [64, 256] {
        let x = Tensor::uniform([1, 3, size, size], 0.0, 1.0, &mut rng);
        group.bench_function(BenchmarkId::new("infer", size), |bch| {
            bch.iter(|| model_forward(&model, black_box(&x), Mode::Infer, None).unwrap())
        });
    }
    group.bench_function("estimate_flops/512", |bch| {
        bch.iter(|| estimate_flops(&model, [1, 3, 512, 512].into()).unwrap())
    });

    let samples = synthetic_set(8, 64, 0);
    let images = Tensor::stack(&samples.iter().map(|s| &s.image).collect::<Vec<_>>()).unwrap();
    let masks = Tensor::stack(&samples.iter().map(|s| &s.mask).collect::<Vec<_>>()).unwrap();
    let run = TrainRunConfig {
        input_size: 64,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model.clone(), run, Default::default(), Default::default()).unwrap();
    group.bench_function("train_step/8x64", |bch| bch.iter(|| trainer.step(&images, &masks).unwrap()));
    group.finish();
}

criterion_group!(benches, convolution, model);
criterion_main!(benches);
