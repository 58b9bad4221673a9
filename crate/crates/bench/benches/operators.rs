use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kicked_hj::hessian::{assemble_hessian, build_action_path, det_dense, det_transfer, min_eigenvalue};
use kicked_hj::variational::{solve_weak_kam, LaxOleinik};
use kicked_hj::viscous::build_kernel;
use kicked_hj::{GridSpec, Potential, TorusField};

fn lax_oleinik(c: &mut Criterion) {
    let mut group = c.benchmark_group("lax_oleinik_apply");
    for n in [256, 1024] {
        let spec = GridSpec::new(1, n).unwrap();
        let op = LaxOleinik::new(spec, Potential::cosine(1, 1.0, 0.0).unwrap()).unwrap();
        let phi = TorusField::from_fn(spec, |x| (6.0 * x[0]).sin());
        group.bench_with_input(BenchmarkId::from_parameter(n), &phi, |b, phi| {
            b.iter(|| op.apply(black_box(phi)))
        });
    }
    group.finish();
}

fn kernel(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernel_apply_log");
    let f = Potential::cosine(1, 1.0, 0.0).unwrap();
    for n in [256, 1024] {
        let spec = GridSpec::new(1, n).unwrap();
        let sol = solve_weak_kam(&f, spec, 1e-10, 5000).unwrap();
        let op = build_kernel(&f, Some(&sol.psi), 0.01, spec).unwrap();
        let w: Vec<f64> = (0..n).map(|i| (i as f64 / n as f64 * 6.0).cos()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &w, |b, w| {
            b.iter(|| op.apply_log(black_box(w)).unwrap())
        });
    }
    group.finish();
}

fn hessian(c: &mut Criterion) {
    let spec = GridSpec::new(1, 1024).unwrap();
    let sol = solve_weak_kam(&Potential::cosine(1, 1.0, 0.0).unwrap(), spec, 1e-10, 5000).unwrap();
    let mut group = c.benchmark_group("hessian");
    for n in [10, 40] {
        let path = build_action_path(51, n, &sol).unwrap();
        let a = assemble_hessian(&path, &sol);
        group.bench_with_input(BenchmarkId::new("det_transfer", n), &a, |b, a| {
            b.iter(|| det_transfer(black_box(a)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("det_dense", n), &a, |b, a| {
            b.iter(|| det_dense(black_box(a)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("min_eigenvalue", n), &a, |b, a| {
            b.iter(|| min_eigenvalue(black_box(a)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, lax_oleinik, kernel, hessian);
criterion_main!(benches);
