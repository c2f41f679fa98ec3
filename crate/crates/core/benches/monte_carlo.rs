//! Monte Carlo workloads on a one-thread pool against the full pool.
//! Build with `--no-default-features` to time the plain sequential loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bellbench_core::apparatus::{ApparatusConfig, PumpSource};
use bellbench_core::estimation::calibrate_sigma_s;
use bellbench_core::hvt::chsh_bound_sweep;
use bellbench_core::{deg, ChshAngles};

#[cfg(feature = "parallel")]
fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let full = rayon::ThreadPoolBuilder::new().build().unwrap();
    let n = full.current_num_threads();
    vec![("sequential".into(), single), (format!("parallel-{n}"), full)]
}

#[cfg(feature = "parallel")]
fn run_in<R: Send>(pool: &rayon::ThreadPool, f: impl FnOnce() -> R + Send) -> R {
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn pools() -> Vec<(String, ())> {
    vec![("sequential".into(), ())]
}

#[cfg(not(feature = "parallel"))]
fn run_in<R>(_: &(), f: impl FnOnce() -> R) -> R {
    f()
}

fn bound_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("chsh_bound_sweep");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new(name, "200x100"), |b| {
            b.iter(|| run_in(&pool, || chsh_bound_sweep(7, 200, 100).unwrap()))
        });
    }
    group.finish();
}

fn sigma_calibration(c: &mut Criterion) {
    let config = ApparatusConfig::default();
    let state = PumpSource { delta_deg: 0.0, visibility: 0.9 }.prepare(deg(45.0), deg(0.0));
    let angles = ChshAngles::canonical();
    let mut group = c.benchmark_group("calibrate_sigma_s");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new(name, "500 runs"), |b| {
            b.iter(|| run_in(&pool, || calibrate_sigma_s(&config, &state, &angles, 15.0, 500, 1).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bound_sweep, sigma_calibration);
criterion_main!(benches);
