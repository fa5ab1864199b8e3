use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lazypi::{dp_lazy_interval, quantile_upper, IntervalConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn values(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn quantiles(c: &mut Criterion) {
    let mut group = c.benchmark_group("quantile_upper");
    for n in [100, 1_000, 10_000] {
        let v = values(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &v, |b, v| b.iter(|| quantile_upper(v, 0.1).unwrap()));
    }
    group.finish();
}

fn intervals(c: &mut Criterion) {
    let preds = values(100);
    let res: Vec<f64> = values(101).iter().map(|v| v.abs()).collect::<Vec<_>>()[..100].to_vec();
    let cfg = IntervalConfig::new(0.1, 0.05).unwrap();
    c.bench_function("dp_lazy_interval n=100", |b| b.iter(|| dp_lazy_interval(&preds, &res, &cfg).unwrap()));
}

criterion_group!(benches, quantiles, intervals);
criterion_main!(benches);
