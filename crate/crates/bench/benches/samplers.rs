use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use pfdiff_bench::{model, start};
use pfdiff_core::metrics::sliced_wasserstein;
use pfdiff_core::pfdiff::pfdiff_sample;
use pfdiff_core::solvers::baseline_sample;
use pfdiff_core::{ChainNoise, GridKind, NoiseSchedule, PFDiffConfig, SampleSet, Solver};

fn score_eval(c: &mut Criterion) {
    let mut group = c.benchmark_group("eps_batch");
    for preset in ["bimodal-2d", "ring-8", "gmm-10d"] {
        let m = model(preset);
        let x = start(4096, m.dim());
        let level = NoiseSchedule::default().level(500);
        group.bench_function(BenchmarkId::from_parameter(preset), |b| {
            b.iter(|| m.eps_batch(black_box(x.view()), level).unwrap())
        });
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let s = NoiseSchedule::default();
    let m = model("bimodal-2d");
    let x = start(1024, 2);
    let mut group = c.benchmark_group("sample_1024_chains");
    for n in [6, 10] {
        let cfg = PFDiffConfig::new(2, 1, n);
        let grid = cfg.grid(GridKind::Uniform, s.t_count()).unwrap();
        group.bench_function(BenchmarkId::new("pfdiff-2-1", n), |b| {
            b.iter(|| pfdiff_sample(&cfg, &m, &s, &grid, black_box(&x), &mut ChainNoise::new(0, 1024)).unwrap())
        });
        let grid = pfdiff_core::TimeGrid::new(GridKind::Uniform, n, s.t_count()).unwrap();
        group.bench_function(BenchmarkId::new("ddim", n), |b| {
            b.iter(|| {
                baseline_sample(&Solver::default(), &m, &s, &grid, black_box(&x), &mut ChainNoise::new(0, 1024)).unwrap()
            })
        });
    }
    group.finish();
}

fn sliced(c: &mut Criterion) {
    let a = SampleSet::new(start(10_000, 2)).unwrap();
    let b = SampleSet::new(ChainNoise::new(1, 10_000).standard_normal(2)).unwrap();
    c.bench_function("sliced_wasserstein_10k_128", |bench| {
        bench.iter(|| sliced_wasserstein(black_box(&a), black_box(&b), 128, 0).unwrap())
    });
}

criterion_group!(benches, score_eval, sampling, sliced);
criterion_main!(benches);
