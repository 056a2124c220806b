use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;
use vd_bench::{raw, representatives, ternary};
use vd_core::analysis::classical_mds;
use vd_core::distance::distance_matrix_with_threads;
use vd_core::{build_all_representatives, discretize, group_by_synset, standardize, visual_distance, Thresholds};

const VGG16_FEATURES: usize = 12_416;

fn pair(c: &mut Criterion) {
    let reps = representatives(2, VGG16_FEATURES);
    c.bench_function("visual_distance/pair", |b| {
        b.iter(|| visual_distance(black_box(&reps[0]), black_box(&reps[1])).unwrap())
    });
}

fn matrix(c: &mut Criterion) {
    let mut g = c.benchmark_group("distance_matrix");
    g.sample_size(10);
    for s in [100, 400] {
        let reps = representatives(s, VGG16_FEATURES);
        g.throughput(Throughput::Elements((s * (s - 1) / 2) as u64));
        for threads in [1, 4] {
            g.bench_with_input(BenchmarkId::new(format!("threads{threads}"), s), &reps, |b, reps| {
                b.iter(|| distance_matrix_with_threads(reps, threads).unwrap())
            });
        }
    }
    g.finish();
}

fn fne(c: &mut Criterion) {
    let (x, _) = raw(500, 4096, 20);
    let mut g = c.benchmark_group("fne");
    g.throughput(Throughput::Elements((500 * 4096) as u64));
    g.bench_function("standardize", |b| b.iter(|| standardize(black_box(&x))));
    let (z, _) = standardize(&x);
    g.bench_function("discretize", |b| {
        b.iter(|| discretize(black_box(&z), Thresholds::default()))
    });
    g.finish();
}

fn represent(c: &mut Criterion) {
    let (t, manifest) = ternary(2000, 4096, 100);
    let groups = group_by_synset(&manifest);
    c.bench_function("representatives/100x20", |b| {
        b.iter(|| build_all_representatives(black_box(&t), &groups).unwrap())
    });
}

fn mds(c: &mut Criterion) {
    let d = distance_matrix_with_threads(&representatives(150, 2048), 1).unwrap();
    let mut g = c.benchmark_group("classical_mds");
    g.sample_size(10);
    g.bench_function("150", |b| b.iter(|| classical_mds(black_box(&d), 2).unwrap()));
    g.finish();
}

criterion_group!(benches, pair, matrix, fne, represent, mds);
criterion_main!(benches);
