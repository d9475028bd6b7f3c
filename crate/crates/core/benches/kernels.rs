//! Hot kernels on the default pool and on a single worker.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use singcurv::clifford::{build_gamma, verify_triple_commutator, TupleMode, VerifyOptions};
use singcurv::dirac::{sweep_row, ConformalSurface, SpinStructureTorus};
use singcurv::frame::MetricField;
use singcurv::integrability::{audit, curvature_terms_quantities, ScanOptions};
use singcurv::measure::{pair_dr, QuadOptions};
use singcurv::par;
use singcurv::testfn::TestFunction;
use std::hint::black_box;

fn pools() -> Vec<(&'static str, Option<usize>)> {
    let mut v = vec![("sequential", Some(1))];
    if par::is_parallel() {
        v.push(("parallel", None));
    }
    v
}

fn on_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(k) => par::with_threads(k, f),
        None => f(),
    }
}

fn bench_pairing(c: &mut Criterion) {
    let mut g = c.benchmark_group("pair_dr_cone3d");
    g.sample_size(10);
    let m = MetricField::cone(0.4, 3);
    let f = TestFunction::bump(vec![0.0; 3], 0.2, 0.5);
    let q = QuadOptions::default();
    for (name, t) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| on_pool(t, || pair_dr(black_box(&m), &f, &q).unwrap().value)));
    }
    g.finish();
}

fn bench_identities(c: &mut Criterion) {
    let mut g = c.benchmark_group("triple_commutator_n4");
    g.sample_size(10);
    let gs = build_gamma(4).unwrap();
    let opts = VerifyOptions { mode: TupleMode::Exhaustive, g0_sign: 1 };
    for (name, t) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| on_pool(t, || verify_triple_commutator(black_box(&gs), opts).exact_zero)));
    }
    g.finish();
}

fn bench_scan(c: &mut Criterion) {
    let mut g = c.benchmark_group("curvature_terms_audit_cone3d");
    g.sample_size(10);
    let m = MetricField::cone(0.4, 3);
    let o = ScanOptions::default();
    let items = curvature_terms_quantities();
    for (name, t) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| on_pool(t, || audit(black_box(&m), &[0.0; 3], &items, None, &o).unwrap().len())));
    }
    g.finish();
}

fn bench_dirac(c: &mut Criterion) {
    let mut g = c.benchmark_group("dirac_kernel_n16");
    g.sample_size(10);
    let s = ConformalSurface::single_cone(0.25);
    for (name, t) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| on_pool(t, || sweep_row(SpinStructureTorus::trivial(), black_box(&s), 0.25, 16).unwrap().k_plus))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_pairing, bench_identities, bench_scan, bench_dirac);
criterion_main!(benches);
