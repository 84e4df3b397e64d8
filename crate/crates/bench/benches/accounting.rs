use criterion::{black_box, criterion_group, criterion_main, Criterion};
use sgm_bench::{typical_params, typical_single_step};
use sgm_core::variance::variance_suite;
use sgm_core::{
    accountant_delta, calibrate_sigma, conjecture_sweep, discretize, kl_gaussian_vs_mixture, self_compose,
    AccountantConfig, ConjectureSweepConfig, Rounding,
};

fn accounting(c: &mut Criterion) {
    let cfg = AccountantConfig::default();
    c.bench_function("discretize", |b| {
        let loss = typical_params(1).loss_fn();
        b.iter(|| discretize(black_box(&loss), &cfg, Rounding::Pessimistic).unwrap())
    });
    let single = typical_single_step();
    c.bench_function("self_compose_1000", |b| b.iter(|| self_compose(black_box(&single), 1_000, &cfg).unwrap()));
    c.bench_function("accountant_delta_1000", |b| {
        let params = typical_params(1_000);
        b.iter(|| accountant_delta(black_box(&params), 1.0, &cfg, Rounding::Pessimistic).unwrap())
    });
}

fn calibration(c: &mut Criterion) {
    let mut group = c.benchmark_group("calibration");
    group.sample_size(10);
    let cfg = AccountantConfig::default();
    group.bench_function("calibrate_q0.1_T100", |b| {
        b.iter(|| calibrate_sigma(0.1, black_box(100), 1.0, 1e-5, &cfg).unwrap())
    });
    group.bench_function("conjecture_sweep_default", |b| {
        let sweep = ConjectureSweepConfig::default();
        b.iter(|| conjecture_sweep(black_box(&sweep)).unwrap())
    });
    group.finish();
}

fn analysis(c: &mut Criterion) {
    c.bench_function("kl_q0.5_u0.025", |b| b.iter(|| kl_gaussian_vs_mixture(black_box(0.5), 0.025).unwrap()));
    let mut group = c.benchmark_group("variance");
    group.sample_size(10);
    group.bench_function("suite_4x1e5", |b| b.iter(|| variance_suite(black_box(7), 4, 100_000).unwrap()));
    group.finish();
}

criterion_group!(benches, accounting, calibration, analysis);
criterion_main!(benches);
