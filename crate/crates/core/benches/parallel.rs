//! Sequential vs rayon execution of the data-parallel kernels.
//!
//! Without the `parallel` feature both variants take the sequential path.

use std::hint::black_box;

use bilinear_motion::harness::ExperimentConfig;
use bilinear_motion::phantom;
use bilinear_motion::{exec, linalg, projector, tensor, Geometry, Phase, Tensor3, Trajectory, Volume};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, bool); 2] = [("sequential", true), ("parallel", false)];

fn random_volume(n: usize) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    Volume::new([n; 3], [4.0; 3], (0..n * n * n).map(|_| rng.random_range(0.0..0.02)).collect()).unwrap()
}

fn bench_projection(c: &mut Criterion) {
    let v = random_volume(64);
    let traj = Trajectory::circular(12, Geometry::fitting(v.extent(), [64, 64])).unwrap();
    let mut g = c.benchmark_group("project_stack_64");
    g.sample_size(10);
    for (name, seq) in MODES {
        exec::set_sequential(seq);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| projector::project_stack(black_box(&v), &traj).unwrap())
        });
    }
    exec::set_sequential(false);
    g.finish();
}

fn bench_gram(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = DMatrix::from_fn(4096, 480, |_, _| rng.random_range(-1.0..1.0));
    let t = Tensor3::from_fn([4096, 8, 60], |i, j, k| ((i * 7 + j * 13 + k * 31) % 97) as f64);
    let mut g = c.benchmark_group("gram");
    g.sample_size(10);
    for (name, seq) in MODES {
        exec::set_sequential(seq);
        g.bench_function(BenchmarkId::new("column_gram_4096x480", name), |b| b.iter(|| linalg::column_gram(black_box(&x))));
        g.bench_function(BenchmarkId::new("mode_svd_pixels", name), |b| b.iter(|| tensor::mode_svd(black_box(&t), 0).unwrap()));
    }
    exec::set_sequential(false);
    g.finish();
}

fn bench_phantom(c: &mut Criterion) {
    let cfg = ExperimentConfig { grid: 48, ..ExperimentConfig::default() };
    let spec = cfg.phantom_spec().unwrap();
    let t = Phase::new(0.375).unwrap();
    let mut g = c.benchmark_group("phantom_48");
    g.sample_size(10);
    for (name, seq) in MODES {
        exec::set_sequential(seq);
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| phantom::generate(black_box(&spec), t).unwrap()));
    }
    exec::set_sequential(false);
    g.finish();
}

criterion_group!(benches, bench_projection, bench_gram, bench_phantom);
criterion_main!(benches);
