use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use reinforce_core::meanfield::{drift, one_step_change, CertificateConfig};
use reinforce_core::rate::{build_profile, lambda_root, tilt_kernel, DEFAULT_ROOT_TOL};
use reinforce_core::triad::{init_state, step_in_place, InitMode};
use reinforce_core::walk::{mc_exit, Walk1DConfig};
use reinforce_core::increments::{DEFAULT_KAPPA, DEFAULT_Q};
use reinforce_core::{replica_rng, IncrementFamily};

fn rate(c: &mut Criterion) {
    let binary = IncrementFamily::binary(0.5).unwrap();
    let three = IncrementFamily::three_atom(DEFAULT_KAPPA, DEFAULT_Q).unwrap();
    c.bench_function("lambda_root/three_atom", |b| {
        b.iter(|| lambda_root(&three, black_box(0.2), DEFAULT_ROOT_TOL).unwrap())
    });
    c.bench_function("build_profile/binary_512", |b| b.iter(|| build_profile(&binary, 512, DEFAULT_ROOT_TOL).unwrap()));
    let profile = build_profile(&binary, 512, DEFAULT_ROOT_TOL).unwrap();
    c.bench_function("tilt_kernel/binary", |b| {
        b.iter(|| tilt_kernel(&binary, &profile, black_box(0.3), 0.125, 0.2).unwrap())
    });
}

fn walk(c: &mut Criterion) {
    let cfg = Walk1DConfig::new(IncrementFamily::binary(0.5).unwrap(), 1.0 / 6.0).unwrap();
    let mut g = c.benchmark_group("mc_exit");
    g.sample_size(20);
    g.bench_function("x=1/6,1000_runs", |b| b.iter(|| mc_exit(&cfg, 1000, black_box(1)).unwrap()));
    g.finish();
}

fn network(c: &mut Criterion) {
    let mut state = init_state(6, 0.4, InitMode::Unit).unwrap();
    let mut rng = replica_rng(1, 0);
    let mut choices = Vec::new();
    c.bench_function("triad_step/N=6", |b| b.iter(|| step_in_place(&mut state, &mut choices, &mut rng).unwrap()));
    let mut g = c.benchmark_group("drift");
    g.sample_size(20);
    for n in [6usize, 8] {
        let s = init_state(n, 0.1, InitMode::Unit).unwrap();
        g.bench_function(format!("exact/N={n}"), |b| b.iter(|| drift(black_box(&s)).unwrap()));
    }
    g.finish();
    let cfg = CertificateConfig::new(6, 0.05, 0.02, 1);
    let h = vec![0.01; 15];
    let mut g = c.benchmark_group("certificate");
    g.sample_size(10);
    g.bench_function("one_step_change/N=6", |b| b.iter(|| one_step_change(&cfg, black_box(&h)).unwrap()));
    g.finish();
}

criterion_group!(benches, rate, walk, network);
criterion_main!(benches);
