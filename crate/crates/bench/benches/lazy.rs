use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use lazypi::{
    dp_sgd_train, fit_all_loo, init_params, param_jacobian, simulate_data, sgd_train, Activation, DpSgdConfig,
    LazyConfig, LooEvaluation, MlpArchitecture, SgdConfig, SimConfig,
};

fn setup(n: usize, p: usize) -> (lazypi::RegressionDataset, MlpArchitecture) {
    let data = simulate_data(&SimConfig::new(n, p, 1)).unwrap();
    let arch = MlpArchitecture::new(p, vec![64, 64], Activation::Relu).unwrap();
    (data, arch)
}

fn jacobian(c: &mut Criterion) {
    let (data, arch) = setup(100, 16);
    let theta = init_params(&arch, 0);
    c.bench_function("param_jacobian 100x16 -> 64,64", |b| {
        b.iter(|| param_jacobian(&theta, &arch, data.features()).unwrap())
    });
}

fn loo(c: &mut Criterion) {
    let (data, arch) = setup(100, 16);
    let test = simulate_data(&SimConfig::new(1000, 16, 2)).unwrap();
    let theta = init_params(&arch, 0);
    let mut group = c.benchmark_group("fit_all_loo n=100");
    group.sample_size(10);
    for eval in [LooEvaluation::Network, LooEvaluation::Linearized] {
        let cfg = LazyConfig {
            evaluation: eval,
            ..LazyConfig::new(10.0).unwrap()
        };
        group.bench_function(format!("fit+predict 1000 ({eval})"), |b| {
            b.iter(|| {
                let fit = fit_all_loo(&theta, &arch, &data, &cfg).unwrap();
                fit.predict(&arch, test.features()).unwrap()
            })
        });
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let (data, arch) = setup(100, 16);
    let mut group = c.benchmark_group("training n=100, 10 epochs");
    group.sample_size(10);
    group.bench_function("sgd", |b| {
        let cfg = SgdConfig {
            learning_rate: 0.01,
            batch_size: 10,
            epochs: 10,
            seed: 3,
        };
        b.iter(|| sgd_train(&data, &arch, &cfg).unwrap())
    });
    group.bench_function("dp-sgd", |b| {
        let cfg = DpSgdConfig {
            noise_scale: 1.0,
            learning_rate: 0.01,
            lot_size: 10,
            clip_norm: 1.0,
            iterations: 100,
            target_delta: 1e-3,
            seed: 3,
        };
        b.iter_batched(|| cfg.clone(), |cfg| dp_sgd_train(&data, &arch, &cfg).unwrap(), BatchSize::SmallInput)
    });
    group.finish();
}

criterion_group!(benches, jacobian, loo, training);
criterion_main!(benches);
