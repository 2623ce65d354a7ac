//! Batch inference through the rayon-backed ordered map versus the plain
//! sequential loop. Build with `--no-default-features` to see the fallback
//! path of `map_ordered` itself.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use echoseg::model::{Model, ModelConfig};
use echoseg::parallel::{map_ordered, map_sequential};
use echoseg::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup() -> (Model, Vec<Tensor>) {
    let cfg = ModelConfig {
        embed_dim: 16,
        frames: 4,
        height: 32,
        width: 32,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let clips = (0..8)
        .map(|_| Tensor::uniform(&[1, 1, cfg.frames, cfg.height, cfg.width], 0.0, 1.0, &mut rng))
        .collect();
    (Model::new(cfg, 0).expect("valid config"), clips)
}

fn batch_eval(c: &mut Criterion) {
    let (model, clips) = setup();
    let mut group = c.benchmark_group("batch_predict_8_clips");
    group.sample_size(10);
    group.bench_function("map_ordered", |b| {
        b.iter(|| map_ordered(black_box(&clips), |_, v| model.predict(v).expect("predict")))
    });
    group.bench_function("map_sequential", |b| {
        b.iter(|| map_sequential(black_box(&clips), |_, v| model.predict(v).expect("predict")))
    });
    group.finish();
}

criterion_group!(benches, batch_eval);
criterion_main!(benches);
