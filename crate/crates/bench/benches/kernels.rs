use std::hint::black_box;

use bcgnn::eval::knn_impute;
use bcgnn::missingness::gen_mcar;
use bcgnn::numcore::Matrix;
use bcgnn::synth::{generate, SynthConfig};
use bcgnn::train::{fit, TrainConfig};
use bcgnn::Dataset;
use criterion::{criterion_group, criterion_main, Criterion};

fn matrix(rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// The desk benchmark table with 30% of cells hidden.
fn desk_data() -> Dataset {
    let synth = generate(&SynthConfig::default()).unwrap();
    let ds = synth.dataset;
    let hide = gen_mcar(ds.num_rows(), ds.num_features(), 0.3, 1).unwrap();
    ds.apply_mask(&hide).unwrap()
}

fn matmul(c: &mut Criterion) {
    let a = matrix(2000, 64);
    let b = matrix(64, 64);
    c.bench_function("matmul 2000x64 * 64x64", |bench| bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap()));
}

fn training(c: &mut Criterion) {
    let ds = desk_data();
    let config = TrainConfig {
        epochs: 5,
        ..TrainConfig::desk()
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("5 epochs, n=500 m=8", |bench| bench.iter(|| fit(black_box(&ds), &config).unwrap()));
    group.finish();
}

fn knn(c: &mut Criterion) {
    let mut ds = desk_data();
    ds.fit_scaler().unwrap();
    let mut group = c.benchmark_group("baseline");
    group.sample_size(10);
    group.bench_function("knn k=5, n=500 m=8", |bench| bench.iter(|| knn_impute(black_box(&ds), 5).unwrap()));
    group.finish();
}

criterion_group!(benches, matmul, training, knn);
criterion_main!(benches);
