use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rfclt_core::oracle::{self, Statistic};
use rfclt_core::{
    gen_innovations, prefix_sums, simulate_linear, simulate_linear_fft, CoeffArray, Distribution, FieldModel,
    InnovationSpec, LatticeIndex, ModelDescriptor, Structure,
};
use std::hint::black_box;

fn square_kernel(side: usize) -> CoeffArray {
    let n = side * side;
    let vals: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
    CoeffArray::new(vec![side, side], vals).unwrap()
}

fn convolution(c: &mut Criterion) {
    let mut g = c.benchmark_group("convolution");
    let spec = InnovationSpec::iid(Distribution::StandardNormal, 3);
    let extent = [256, 256];
    g.throughput(Throughput::Elements((extent[0] * extent[1]) as u64));
    for side in [2, 8, 32] {
        let k = square_kernel(side);
        let xi = gen_innovations(&spec, &extent, &[side - 1, side - 1]).unwrap();
        g.bench_with_input(BenchmarkId::new("direct", side), &side, |b, _| {
            b.iter(|| simulate_linear(black_box(&k), &extent, &xi).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("fft", side), &side, |b, _| {
            b.iter(|| simulate_linear_fft(black_box(&k), &extent, &xi).unwrap())
        });
    }
    g.finish();
}

fn prefix(c: &mut Criterion) {
    let mut g = c.benchmark_group("prefix_sums");
    let spec = InnovationSpec::iid(Distribution::StandardNormal, 5);
    for side in [64, 256, 1024] {
        let xi = gen_innovations(&spec, &[side, side], &[0, 0]).unwrap();
        let w = xi.window().clone();
        g.throughput(Throughput::Elements((side * side) as u64));
        g.bench_with_input(BenchmarkId::new("build", side), &side, |b, _| b.iter(|| prefix_sums(black_box(&w)).unwrap()));
        let p = prefix_sums(&w).unwrap();
        let (lo, hi) = (LatticeIndex::from([2, 3]), LatticeIndex::from([side as i64 - 1, side as i64 / 2]));
        g.bench_with_input(BenchmarkId::new("rect_sum", side), &side, |b, _| {
            b.iter(|| p.rect_sum(black_box(&lo), black_box(&hi)).unwrap())
        });
    }
    g.finish();
}

fn innovations(c: &mut Criterion) {
    let mut g = c.benchmark_group("innovations");
    let extent = [256, 256];
    g.throughput(Throughput::Elements((extent[0] * extent[1]) as u64));
    for (name, dist, structure) in [
        ("normal-iid", Distribution::StandardNormal, Structure::Iid),
        ("rademacher-iid", Distribution::Rademacher, Structure::Iid),
        ("rademacher-column-mds", Distribution::Rademacher, Structure::ColumnMds),
    ] {
        let spec = InnovationSpec::new(dist, structure, 11);
        g.bench_function(name, |b| b.iter(|| gen_innovations(black_box(&spec), &extent, &[1, 1]).unwrap()));
    }
    g.finish();
}

fn enumeration(c: &mut Criterion) {
    let mut g = c.benchmark_group("enumeration");
    g.sample_size(10);
    let spec = InnovationSpec::new(Distribution::Rademacher, Structure::Iid, 0);
    for u in [2usize, 3] {
        // Everything in [0, 2]^2 but the far corner: 24 sites at u = 3.
        let entries: Vec<(LatticeIndex, f64)> = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|&t| t != (2, 2))
            .map(|(i, j)| (LatticeIndex::from([i, j]), 0.5))
            .collect();
        let desc = ModelDescriptor {
            model: FieldModel::Linear(CoeffArray::from_entries(2, &entries).unwrap()),
            innovations: spec,
        };
        let m = oracle::enumerate_model(&desc, &[u, u]).unwrap();
        let stat = Statistic::partial_sum(&[u as i64, u as i64].into());
        g.throughput(Throughput::Elements(m.n_configurations()));
        g.bench_with_input(BenchmarkId::new("cond_expectation_sites", m.n_sites()), &m, |b, m| {
            b.iter(|| oracle::exact_cond_expectation(m, &stat, &[0, 0].into()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, convolution, prefix, innovations, enumeration);
criterion_main!(benches);
