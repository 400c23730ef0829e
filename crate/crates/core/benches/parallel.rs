//! Default rayon pool against a one-thread pool on the hot paths.
//! `cargo bench --no-default-features` measures the plain-iterator build.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPoolBuilder;

use vitalsig_core::attribution::{background_sample, shapley_mc};
use vitalsig_core::ml::{RandomForest, RfParams};
use vitalsig_core::rppg::{estimate_hr, pos_bvp};
use vitalsig_core::synthgen::{synth_dataset, synth_rppg, SynthSpec};

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let n = rayon::current_num_threads();
    let mut sizes = vec![1];
    if n > 1 {
        sizes.push(n);
    }
    sizes
        .into_iter()
        .map(|t| (format!("{t}_threads"), ThreadPoolBuilder::new().num_threads(t).build().unwrap()))
        .collect()
}

fn bench(c: &mut Criterion) {
    let pools = pools();

    let (set, _) = synth_rppg(&SynthSpec { noise_sigma: 0.5, ..Default::default() }).unwrap();
    let bvp = pos_bvp(&set).unwrap();
    let mut g = c.benchmark_group("estimate_hr");
    g.sample_size(10);
    for (name, pool) in &pools {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| estimate_hr(black_box(&bvp), 6.0, 1.0).unwrap()))
        });
    }
    g.finish();

    let data = synth_dataset(100, 29, 2.0, 1).unwrap();
    let (x, y) = (data.rows(), data.labels());
    let params = RfParams { n_trees: 100, ..Default::default() };
    let mut g = c.benchmark_group("rf_fit");
    g.sample_size(10);
    for (name, pool) in &pools {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| RandomForest::fit(black_box(&x), &y, &params).unwrap()))
        });
    }
    g.finish();

    let forest = RandomForest::fit(&x, &y, &params).unwrap();
    let background = background_sample(&x, 2);
    let mut g = c.benchmark_group("shapley_mc");
    g.sample_size(10);
    for (name, pool) in &pools {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| shapley_mc(&forest, black_box(&x[0]), &background, 200, 3).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
