use std::hint::black_box;

use anderson_strip::{
    assemble_truncation, fast_scan, sample_potential, CocycleState, PotentialModel, RngStream, SiteLaw,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn uniform_model(width: usize) -> PotentialModel {
    PotentialModel::schrodinger(width, SiteLaw::UniformInterval { lo: -1.0, hi: 1.0 }).unwrap()
}

fn cocycle_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("cocycle_1000_steps");
    for width in [2, 4] {
        let pot = sample_potential(&uniform_model(width), 1000, &RngStream::new(1, 0)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(width), &pot, |b, pot| {
            b.iter(|| {
                let mut state = CocycleState::identity(width);
                for v in pot.sites() {
                    state.step(0.3, v).unwrap();
                }
                black_box(state.singular_log_spectrum().unwrap())
            })
        });
    }
    group.finish();
}

fn inertia_count(c: &mut Criterion) {
    let pot = sample_potential(&uniform_model(2), 2000, &RngStream::new(2, 0)).unwrap();
    let op = assemble_truncation(&pot, 2000).unwrap();
    c.bench_function("count_below_w2_n2000", |b| b.iter(|| black_box(op.count_below(black_box(0.1)))));
}

fn scan(c: &mut Criterion) {
    let pot = sample_potential(&uniform_model(2), 100, &RngStream::new(3, 0)).unwrap();
    c.bench_function("fast_scan_w2_n100_g256", |b| {
        b.iter(|| black_box(fast_scan(&pot, 0.0, 0.05, 100, 256).unwrap().global_min))
    });
}

criterion_group!(benches, cocycle_steps, inertia_count, scan);
criterion_main!(benches);
