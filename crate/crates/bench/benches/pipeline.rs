use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ioi_core::attacks::ioi_attack;
use ioi_core::fixtures::textured_image;
use ioi_core::metrics::CnnMetric;
use ioi_core::spectral::select_topf;
use ioi_core::weighting::ioi_weights;
use ioi_core::{fft2, ifft2, AttackConfig, GradientOracle};

const SIZES: [(usize, usize); 2] = [(256, 256), (720, 1280)];

fn label(h: usize, w: usize) -> String {
    format!("{w}x{h}")
}

fn spectral(c: &mut Criterion) {
    let mut g = c.benchmark_group("spectral");
    g.sample_size(10);
    for (h, w) in SIZES {
        let img = textured_image(1, h, w, 3);
        let spec = fft2(&img);
        g.bench_with_input(BenchmarkId::new("fft2", label(h, w)), &img, |b, img| {
            b.iter(|| fft2(black_box(img)))
        });
        g.bench_with_input(BenchmarkId::new("ifft2", label(h, w)), &spec, |b, s| {
            b.iter(|| ifft2(black_box(s)))
        });
        g.bench_with_input(BenchmarkId::new("select_topf", label(h, w)), &spec, |b, s| {
            b.iter(|| select_topf(black_box(s), 0.05).unwrap())
        });
    }
    g.finish();
}

fn weights(c: &mut Criterion) {
    let mut g = c.benchmark_group("weights");
    g.sample_size(10);
    for (h, w) in SIZES {
        let img = textured_image(2, h, w, 3);
        g.bench_with_input(BenchmarkId::new("ioi", label(h, w)), &img, |b, img| {
            b.iter(|| ioi_weights(black_box(img)).unwrap())
        });
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let mut g = c.benchmark_group("cnn");
    g.sample_size(10);
    let m = CnnMetric::new(0);
    for (h, w) in SIZES {
        let img = textured_image(3, h, w, 3);
        g.bench_with_input(BenchmarkId::new("value", label(h, w)), &img, |b, img| {
            b.iter(|| m.value(black_box(img)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("value_and_gradient", label(h, w)), &img, |b, img| {
            b.iter(|| m.value_and_gradient(black_box(img)).unwrap())
        });
    }
    g.finish();
}

fn attack(c: &mut Criterion) {
    let mut g = c.benchmark_group("ioi_attack");
    g.sample_size(10);
    let m = CnnMetric::new(0);
    let cfg = AttackConfig::video_default();
    for (h, w) in SIZES {
        let img = textured_image(4, h, w, 3);
        g.bench_with_input(BenchmarkId::from_parameter(label(h, w)), &img, |b, img| {
            b.iter(|| ioi_attack(black_box(img), &m, &cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, spectral, weights, oracle, attack);
criterion_main!(benches);
