use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use histofuse::classify::{self, Hyperparams, KnnParams};
use histofuse::hog::hog;
use histofuse::metrics::auc;
use histofuse::noise::inject_noise;
use histofuse::tune::gp::gp_fit;
use histofuse::{HogConfig, NoiseConfig};
use histofuse_bench::{random_image, random_matrix, scored_labels};

fn bench_hog(c: &mut Criterion) {
    let img = random_image(299, 1);
    let mut g = c.benchmark_group("hog_299");
    for cell in [32, 64, 128] {
        let cfg = HogConfig {
            cell_size: cell,
            ..HogConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(cell), &cfg, |b, cfg| {
            b.iter(|| hog(black_box(&img), cfg).unwrap())
        });
    }
    g.finish();
}

fn bench_noise(c: &mut Criterion) {
    let img = random_image(299, 2);
    c.bench_function("inject_noise_299", |b| {
        b.iter(|| inject_noise(black_box(&img), &NoiseConfig::new(30.0, 5)).unwrap())
    });
}

fn bench_auc(c: &mut Criterion) {
    let mut g = c.benchmark_group("auc");
    for n in [1_000, 10_000] {
        let (s, y) = scored_labels(n, 3);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| auc(black_box(&s), black_box(&y)).unwrap())
        });
    }
    g.finish();
}

fn bench_gp(c: &mut Criterion) {
    let x = random_matrix(30, 4, 4);
    let points: Vec<Vec<f64>> = (0..x.rows()).map(|i| x.row(i).to_vec()).collect();
    let values: Vec<f64> = points.iter().map(|p| p.iter().map(|v| (3.0 * v).sin()).sum()).collect();
    c.bench_function("gp_fit_30x4", |b| b.iter(|| gp_fit(black_box(&points), black_box(&values)).unwrap()));
}

fn bench_knn(c: &mut Criterion) {
    let train = random_matrix(1000, 64, 6);
    let labels: Vec<usize> = (0..1000).map(|i| i % 5).collect();
    let probe = random_matrix(200, 64, 7);
    let hp = Hyperparams::Knn(KnnParams::default());
    let model = classify::train(&hp, &train, &labels, 5, 0).unwrap();
    c.bench_function("knn_predict_200x1000x64", |b| {
        b.iter(|| model.predict_scores(black_box(&probe)).unwrap())
    });
}

criterion_group!(kernels, bench_hog, bench_noise, bench_auc, bench_gp, bench_knn);
criterion_main!(kernels);
