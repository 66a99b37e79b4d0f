use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use racs_bench::{heads, StepFixture};

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(20);
    for (name, spec) in heads() {
        for r in [10, 64] {
            let mut fixture = StepFixture::new(&spec, r, 64);
            group.bench_function(BenchmarkId::new(name, r), |b| b.iter(|| fixture.step().unwrap()));
        }
    }
    group.finish();
}

criterion_group!(benches, train_step);
criterion_main!(benches);
