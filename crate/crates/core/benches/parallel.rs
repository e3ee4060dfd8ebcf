//! Compares the sequential and rayon paths of the data-parallel kernels:
//! scene rendering, full-model forward evaluation, and per-sample metric
//! scoring.

use criterion::{criterion_group, criterion_main, Criterion};

use amsod_core::config::ModelConfig;
use amsod_core::metrics::{f_beta, mae, FbetaPolicy};
use amsod_core::model::Model;
use amsod_core::par;
use amsod_core::synthdata::{render_sample, sample_spec, SceneSpec};
use amsod_core::types::{default_modalities, ComboLabel, MultimodalSample};

fn specs(n: usize) -> Vec<SceneSpec> {
    let known = default_modalities();
    let combo = ComboLabel::parse("rgb-d-t", &known).unwrap();
    (0..n).map(|i| sample_spec(i as u64, 64, &combo)).collect()
}

fn samples(n: usize) -> Vec<MultimodalSample> {
    let known = default_modalities();
    specs(n).iter().map(|s| render_sample(s, &known).unwrap()).collect()
}

fn bench_render(c: &mut Criterion) {
    let known = default_modalities();
    let specs = specs(16);
    let mut group = c.benchmark_group("render_scene_x16");
    group.bench_function("seq", |b| {
        b.iter(|| par::map_seq(&specs, |s| render_sample(s, &known).unwrap()))
    });
    #[cfg(feature = "parallel")]
    group.bench_function("par", |b| {
        b.iter(|| par::map_par(&specs, |s| render_sample(s, &known).unwrap()))
    });
    group.finish();
}

fn bench_forward(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let model = Model::new(cfg, 7).unwrap();
    let data = samples(8);
    let mut group = c.benchmark_group("model_forward_x8");
    group.sample_size(10);
    group.bench_function("seq", |b| {
        b.iter(|| par::map_seq(&data, |s| model.predict_map(s).unwrap()))
    });
    #[cfg(feature = "parallel")]
    group.bench_function("par", |b| {
        b.iter(|| par::map_par(&data, |s| model.predict_map(s).unwrap()))
    });
    group.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let data = samples(32);
    let preds: Vec<_> = data
        .iter()
        .map(|s| {
            let (h, w) = s.size();
            ndarray::Array2::from_shape_fn((h, w), |(i, j)| {
                0.05 + 0.9 * s.ground_truth[[i, j]] * ((i + j) % 3) as f64 / 2.0
            })
        })
        .collect();
    let pairs: Vec<usize> = (0..data.len()).collect();
    let score = |&i: &usize| {
        let m = mae(&preds[i], &data[i].ground_truth).unwrap();
        let f = f_beta(&preds[i], &data[i].ground_truth, FbetaPolicy::Sweep).unwrap();
        (m, f)
    };
    let mut group = c.benchmark_group("score_sample_x32");
    group.bench_function("seq", |b| b.iter(|| par::map_seq(&pairs, score)));
    #[cfg(feature = "parallel")]
    group.bench_function("par", |b| b.iter(|| par::map_par(&pairs, score)));
    group.finish();
}

criterion_group!(benches, bench_render, bench_forward, bench_metrics);
criterion_main!(benches);
