//! Kernel throughput. With the `parallel` feature each kernel runs on the
//! global rayon pool and on a one-thread pool; without it only the sequential
//! build is measured.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dtc_core::dtc::{dtc_forward, init_dtc, AblationSwitches, BaseKind, ReceptiveField};
use dtc_core::ops::{conv_forward, grid_sample, make_base_grid, ConvSpec};
use dtc_core::rng::SplitMix64;
use dtc_core::Tensor;

fn random(dims: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = SplitMix64::new(seed);
    Tensor::from_fn(dims, |_| rng.normal() as f32)
}

#[cfg(feature = "parallel")]
fn modes() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("rayon", None), ("one_thread", Some(one))]
}

#[cfg(not(feature = "parallel"))]
fn modes() -> Vec<(&'static str, Option<()>)> {
    vec![("sequential", None)]
}

#[cfg(feature = "parallel")]
fn run<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run<R>(_: &Option<()>, f: impl FnOnce() -> R) -> R {
    f()
}

fn kernels(c: &mut Criterion) {
    let x = random(&[4, 16, 64, 64], 1);
    let conv = ConvSpec::new(random(&[16, 16, 3, 3], 2), vec![1, 1], vec![1, 1]).unwrap();
    let grid = make_base_grid::<f32>(4, &[128, 128], 2).unwrap();
    let mut dtc = init_dtc::<f32>(
        16,
        16,
        2,
        2,
        ReceptiveField::default(),
        BaseKind::LinearInterp,
        AblationSwitches::FULL,
        3,
    )
    .unwrap();
    dtc.gen.kernel = random(dtc.gen.kernel.dims(), 4).scale(0.1);

    let mut group = c.benchmark_group("kernels");
    group.sample_size(20);
    for (mode, pool) in modes() {
        group.bench_function(BenchmarkId::new("conv3x3", mode), |b| {
            b.iter(|| run(&pool, || conv_forward(&x, &conv).unwrap()))
        });
        group.bench_function(BenchmarkId::new("grid_sample", mode), |b| {
            b.iter(|| run(&pool, || grid_sample(&x, &grid).unwrap()))
        });
        group.bench_function(BenchmarkId::new("dtc_forward", mode), |b| {
            b.iter(|| run(&pool, || dtc_forward(&x, &dtc).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
