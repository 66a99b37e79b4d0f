use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use racs_bench::gaussian_rows;
use racs_core::linalg::{pinv_append_row, pinv_grad, pinv_rows};
use racs_core::Matrix;

fn batch(c: &mut Criterion) {
    let mut group = c.benchmark_group("pinv_rows");
    for (r, n) in [(10, 256), (64, 256), (272, 1089)] {
        let phi = gaussian_rows(r, n, 1);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{r}x{n}")), &phi, |b, phi| {
            b.iter(|| pinv_rows(black_box(phi)).unwrap())
        });
    }
    group.finish();
}

fn append(c: &mut Criterion) {
    let mut group = c.benchmark_group("pinv_append_row");
    for (r, n) in [(10, 256), (63, 256), (271, 1089)] {
        let all = gaussian_rows(r + 1, n, 2);
        let head = Matrix::new(r, n, all.data()[..r * n].to_vec()).unwrap();
        let state = pinv_rows(&head).unwrap();
        let row = all.row(r).to_vec();
        group.bench_function(BenchmarkId::from_parameter(format!("{r}x{n}")), |b| {
            b.iter(|| pinv_append_row(black_box(&state), black_box(&row)).unwrap())
        });
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("pinv_grad");
    for (r, n) in [(10, 256), (64, 256)] {
        let state = pinv_rows(&gaussian_rows(r, n, 3)).unwrap();
        let grad_psi = gaussian_rows(r, n, 4).transpose();
        group.bench_function(BenchmarkId::from_parameter(format!("{r}x{n}")), |b| {
            b.iter(|| pinv_grad(black_box(&state), black_box(&grad_psi)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch, append, gradient);
criterion_main!(benches);
