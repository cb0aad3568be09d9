use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use spikecca::refdist::goe_gap_draws;
use spikecca::sampling::{sample_spiked, sample_spiked_spectrum};
use spikecca::{cca_eigenvalues, ModelConfig, SampleSeed, SpikeSpec};

const SHAPES: [(usize, usize, usize); 3] = [(60, 30, 600), (110, 55, 1100), (500, 1000, 5000)];

fn spikes() -> SpikeSpec {
    SpikeSpec::new(vec![0.5, 0.4, 0.3, 0.16]).unwrap()
}

fn engine(c: &mut Criterion) {
    let mut group = c.benchmark_group("cca_eigenvalues");
    group.sample_size(10);
    for (p, q, n) in SHAPES {
        let config = ModelConfig::new(p, q, n).unwrap();
        let data = sample_spiked(config, &spikes(), SampleSeed::new(1, 0)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(format!("{p}x{q}x{n}")), &data, |b, d| {
            b.iter(|| cca_eigenvalues(black_box(&d.x), black_box(&d.y), true).unwrap())
        });
    }
    group.finish();
}

fn samplers(c: &mut Criterion) {
    let mut group = c.benchmark_group("spiked_spectrum");
    group.sample_size(10);
    for (p, q, n) in SHAPES {
        let config = ModelConfig::new(p, q, n).unwrap();
        let label = format!("{p}x{q}x{n}");
        group.bench_function(BenchmarkId::new("reduced", &label), |b| {
            let mut rep = 0;
            b.iter(|| {
                rep += 1;
                sample_spiked_spectrum(config, &spikes(), SampleSeed::new(2, rep)).unwrap()
            })
        });
        group.bench_function(BenchmarkId::new("full", &label), |b| {
            let mut rep = 0;
            b.iter(|| {
                rep += 1;
                let d = sample_spiked(config, &spikes(), SampleSeed::new(3, rep)).unwrap();
                cca_eigenvalues(&d.x, &d.y, true).unwrap()
            })
        });
    }
    group.finish();
}

fn gaps(c: &mut Criterion) {
    let mut group = c.benchmark_group("goe_gap_draws");
    for j1 in [2, 6, 10] {
        group.bench_with_input(BenchmarkId::from_parameter(j1), &j1, |b, &j1| {
            b.iter(|| goe_gap_draws(j1, 0.5, 10_000, SampleSeed::new(4, 0)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, engine, samplers, gaps);
criterion_main!(benches);
