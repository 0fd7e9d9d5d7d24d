//! Throughput of the data-parallel stages, on a one-thread rayon pool and on
//! the default pool. Without the `parallel` feature only the sequential
//! variant is measured.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use gascreen_core::dataset::Task;
use gascreen_core::folds::AugmentConfig;
use gascreen_core::model::{build_model, predict, train, Example, ModelConfig, TrainingConfig};
use gascreen_core::par;
use gascreen_core::preprocess::{preprocess, PreparedImage, PreprocessConfig};
use gascreen_core::raster::RgbRaster;
use gascreen_core::synth::{generate_eye, SynthSpec};

const SIZE: usize = 128;

fn photos(n: usize) -> Vec<RgbRaster> {
    (0..n as u64)
        .map(|s| generate_eye(&SynthSpec::new(SIZE, s)).unwrap().image)
        .collect()
}

fn prepared(photos: &[RgbRaster]) -> Vec<PreparedImage> {
    let cfg = PreprocessConfig::with_size(SIZE);
    photos.iter().map(|p| preprocess(p, &cfg).unwrap()).collect()
}

#[cfg(feature = "parallel")]
fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![
        ("single".to_string(), single),
        (format!("default_{}t", default.current_num_threads()), default),
    ]
}

/// Runs `f` under each pool being compared.
fn each_pool(mut f: impl FnMut(&str, &dyn Fn(&mut (dyn FnMut() + Send)))) {
    #[cfg(feature = "parallel")]
    for (name, pool) in pools() {
        f(&name, &|g: &mut (dyn FnMut() + Send)| pool.install(g));
    }
    #[cfg(not(feature = "parallel"))]
    f("sequential", &|g: &mut (dyn FnMut() + Send)| g());
}

fn bench_preprocess(c: &mut Criterion) {
    let photos = photos(32);
    let cfg = PreprocessConfig::with_size(SIZE);
    let mut group = c.benchmark_group("preprocess");
    group.throughput(Throughput::Elements(photos.len() as u64));
    each_pool(|name, run| {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(&mut || {
                std::hint::black_box(par::map(&photos, |p| preprocess(p, &cfg).unwrap()));
            }))
        });
    });
    group.finish();
}

fn bench_predict(c: &mut Criterion) {
    let images = prepared(&photos(32));
    let refs: Vec<&PreparedImage> = images.iter().collect();
    let model = build_model(&ModelConfig::tiny(SIZE, Task::Ga), 1).unwrap();
    let artifact = gascreen_core::model::ModelArtifact::new(model, images[0].fingerprint.clone(), TrainingConfig::default());
    let mut group = c.benchmark_group("predict");
    group.throughput(Throughput::Elements(refs.len() as u64));
    each_pool(|name, run| {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(&mut || {
                std::hint::black_box(predict(&artifact, &refs).unwrap());
            }))
        });
    });
    group.finish();
}

fn bench_train_epoch(c: &mut Criterion) {
    let images = prepared(&photos(40));
    let examples: Vec<Example> = images
        .iter()
        .enumerate()
        .map(|(i, image)| Example { image, label: i % 4 == 0 })
        .collect();
    let (tr, dev) = examples.split_at(32);
    let cfg = TrainingConfig {
        max_epochs: 1,
        patience_epochs: 1,
        augment: AugmentConfig::default(),
        ..TrainingConfig::default()
    };
    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    group.throughput(Throughput::Elements(tr.len() as u64));
    each_pool(|name, run| {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(&mut || {
                let model = build_model(&ModelConfig::tiny(SIZE, Task::Ga), 1).unwrap();
                std::hint::black_box(train(model, tr, dev, &cfg, 0).unwrap());
            }))
        });
    });
    group.finish();
}

criterion_group!(benches, bench_preprocess, bench_predict, bench_train_epoch);
criterion_main!(benches);
