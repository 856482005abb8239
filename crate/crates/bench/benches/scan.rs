//! Criterion benchmarks for the LTI scan paths: the recurrence itself
//! and the Krylov kernel precomputation whose cost model is
//! N^2 (L-1) + N L multiplications.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mambalab_core::linalg::norm_inf;
use mambalab_core::scan::{build_kernel, scan_recurrent};
use mambalab_core::ssm::{DiscreteSsm, DiscretizeMethod};
use mambalab_core::Rng;

fn random_stable(rng: &mut Rng, n: usize) -> DiscreteSsm {
    let mut abar: Vec<f64> = (0..n * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let norm = norm_inf(&abar, n);
    if norm > 0.99 {
        let s = 0.99 / norm;
        for v in &mut abar {
            *v *= s;
        }
    }
    DiscreteSsm {
        abar,
        bbar: (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        cbar: (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        n,
        dt: 1.0,
        method: DiscretizeMethod::ZohApprox,
    }
}

fn bench_scans(c: &mut Criterion) {
    let mut rng = Rng::new(42);
    let l = 256;
    for n in [4usize, 8, 16] {
        let sys = random_stable(&mut rng, n);
        let x: Vec<f64> = (0..l).map(|_| rng.uniform(-1.0, 1.0)).collect();
        c.bench_with_input(BenchmarkId::new("scan_recurrent", n), &n, |b, _| {
            b.iter(|| scan_recurrent(std::hint::black_box(&sys), std::hint::black_box(&x), None))
        });
        c.bench_with_input(BenchmarkId::new("build_kernel", n), &n, |b, _| {
            b.iter(|| build_kernel(std::hint::black_box(&sys), std::hint::black_box(l)))
        });
    }
}

criterion_group!(benches, bench_scans);
criterion_main!(benches);
