//! Acceptance report: one PASS/FAIL line per criterion, plus INFO lines.
//!
//! Runs as a plain binary (`harness = false`). By default it exits 0 so the
//! full report is always produced under `cargo test`; set
//! `LAZYPI_ACCEPTANCE_STRICT=1` to exit nonzero when any criterion fails.

use std::path::Path;
use std::time::Instant;

use lazypi::harness::{interval_metrics, ridge_jackknife_plus, split_indices, SplitConfig};
use lazypi::lazy::lazy_solve_primal;
use lazypi::nn::batch_loss_gradients;
use lazypi::privacy::RDP_ORDERS;
use lazypi::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Report {
    passed: usize,
    failed: Vec<&'static str>,
}

impl Report {
    fn check(&mut self, name: &'static str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if ok {
            self.passed += 1;
        } else {
            self.failed.push(name);
        }
    }
}

fn info(name: &str, detail: String) {
    println!("INFO {name}: {detail}");
}

fn manifest(name: &str) -> RunManifest {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests").join(name);
    RunManifest::from_file(path).expect("shipped manifest parses")
}

// ---------------------------------------------------------------------------
// Coverage and speed on the simulation protocol.

const COVERAGE_FLOOR: f64 = 0.78;
const SPEEDUP: f64 = 3.0;

fn simulation_criteria(r: &mut Report) {
    let mut m16 = manifest("sim_p16.toml");
    m16.methods = vec![Method::JackknifePlus, Method::DpLazy];
    m16.workers = 1;
    m16.config.intra_trial_threads = 1;
    let start = Instant::now();
    let out = run_comparison(&m16, None).expect("p = 16 comparison runs");
    info("p16_run", format!("{} cells in {:.1}s", out.results.len(), start.elapsed().as_secs_f64()));
    let dp: Vec<&TrialResult> = out.results.iter().filter(|t| t.method == Method::DpLazy).collect();
    let jk: Vec<&TrialResult> = out.results.iter().filter(|t| t.method == Method::JackknifePlus).collect();
    let cov = dp.iter().map(|t| t.coverage).sum::<f64>() / dp.len() as f64;
    r.check(
        "coverage_p16",
        cov >= COVERAGE_FLOOR,
        format!(
            "dp_lazy mean coverage {cov:.4} over {} trials (floor {COVERAGE_FLOOR}); noise scale {:.3}, accounted epsilon {:.4}",
            dp.len(),
            out.provenance.noise_scale.unwrap_or(f64::NAN),
            out.provenance.accounted_epsilon.unwrap_or(f64::NAN),
        ),
    );

    let ratios: Vec<f64> = jk
        .iter()
        .zip(&dp)
        .map(|(a, b)| (a.train_seconds + a.eval_seconds) / (b.train_seconds + b.eval_seconds))
        .collect();
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = |v: &[&TrialResult], f: fn(&TrialResult) -> f64| v.iter().map(|t| f(t)).sum::<f64>() / v.len() as f64;
    r.check(
        "speedup_p16",
        min_ratio >= SPEEDUP,
        format!(
            "jackknife+ / dp_lazy total time, worst trial {min_ratio:.2}x, mean {:.2}x (need >= {SPEEDUP}x every trial); \
             mean seconds train/eval: jackknife+ {:.3}/{:.3}, dp_lazy {:.3}/{:.3}",
            ratios.iter().sum::<f64>() / ratios.len() as f64,
            mean(&jk, |t| t.train_seconds),
            mean(&jk, |t| t.eval_seconds),
            mean(&dp, |t| t.train_seconds),
            mean(&dp, |t| t.eval_seconds),
        ),
    );
    let train_ordered = jk.iter().zip(&dp).all(|(a, b)| b.train_seconds < a.train_seconds);
    info(
        "train_time_ordering",
        format!("dp_lazy train_seconds < jackknife+ train_seconds on every trial: {train_ordered}"),
    );

    // Same protocol with the leave-one-out models evaluated as the linear
    // models the lazy refit optimizes (not the default).
    let mut lin = m16.clone();
    lin.methods = vec![Method::DpLazy];
    lin.config.lazy.evaluation = LooEvaluation::Linearized;
    let lin_out = run_comparison(&lin, None).expect("linearized run");
    let lin_ratios: Vec<f64> = jk
        .iter()
        .zip(&lin_out.results)
        .map(|(a, b)| (a.train_seconds + a.eval_seconds) / (b.train_seconds + b.eval_seconds))
        .collect();
    let lin_cov = lin_out.results.iter().map(|t| t.coverage).sum::<f64>() / lin_out.results.len() as f64;
    info(
        "speedup_p16_linearized_eval",
        format!(
            "worst trial {:.2}x, mean {:.2}x; coverage {lin_cov:.4}",
            lin_ratios.iter().copied().fold(f64::INFINITY, f64::min),
            lin_ratios.iter().sum::<f64>() / lin_ratios.len() as f64,
        ),
    );

    let mut m100 = manifest("sim_p100.toml");
    m100.methods = vec![Method::DpLazy];
    let out = run_comparison(&m100, None).expect("p = 100 comparison runs");
    let cov = out.results.iter().map(|t| t.coverage).sum::<f64>() / out.results.len() as f64;
    r.check(
        "coverage_p100",
        cov >= COVERAGE_FLOOR,
        format!("dp_lazy mean coverage {cov:.4} over {} trials (floor {COVERAGE_FLOOR})", out.results.len()),
    );
}

// ---------------------------------------------------------------------------
// Jackknife+ coverage with a ridge base learner.

fn ridge_jackknife_criterion(r: &mut Report) {
    const TRIALS: usize = 500;
    const ALPHA: f64 = 0.1;
    let floor = 1.0 - 2.0 * ALPHA - 3.0 * (0.8f64 * 0.2 / TRIALS as f64).sqrt();
    let split = SplitConfig {
        n_train: 100,
        n_test: Some(100),
    };
    let mut coverages = Vec::with_capacity(TRIALS);
    for t in 0..TRIALS as u64 {
        let data = simulate_data(&SimConfig::new(200, 16, 10_000 + t)).unwrap();
        let (tr, te) = split_indices(data.len(), &split, t).unwrap();
        let (train, test) = (data.select(&tr), data.select(&te));
        let ivs = ridge_jackknife_plus(&train, test.features(), 1.0, ALPHA).unwrap();
        coverages.push(interval_metrics(&ivs, test.responses().as_slice()).unwrap().0);
    }
    let cov = coverages.iter().sum::<f64>() / TRIALS as f64;
    r.check(
        "jackknife_plus_ridge_coverage",
        cov >= floor,
        format!("mean coverage {cov:.4} over {TRIALS} trials at alpha {ALPHA} (floor {floor:.4})"),
    );
}

// ---------------------------------------------------------------------------
// Closed-form lazy refit.

fn lazy_correctness(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shapes: [(usize, &[usize]); 4] = [(2, &[4]), (3, &[5]), (2, &[3, 3]), (4, &[])];
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (p, hidden) = shapes[i % shapes.len()];
        let act = [Activation::Tanh, Activation::Sigmoid, Activation::Relu][i % 3];
        let arch = MlpArchitecture::new(p, hidden.to_vec(), act).unwrap();
        assert!(arch.num_params() <= 50);
        let n = rng.random_range(1..=20);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let data = RegressionDataset::new(x, y).unwrap();
        let theta = init_params(&arch, i as u64);
        let lambda = [0.1, 1.0, 10.0][i % 3];
        let dual = lazy_solve(&theta, &arch, &data, &LazyConfig::new(lambda).unwrap()).unwrap();
        let primal = lazy_solve_primal(&theta, &arch, &data, lambda).unwrap();
        for (a, b) in dual.values().iter().zip(primal.values()) {
            worst = worst.max((a - b).abs());
        }
    }
    let mut worst_linear = 0.0f64;
    for i in 0..20 {
        let p = 1 + i % 5;
        let n = 5 + i;
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let data = RegressionDataset::new(x, y).unwrap();
        let arch = MlpArchitecture::new(p, vec![], Activation::Relu).unwrap();
        let lambda = 0.5 + i as f64;
        let lazy = lazy_solve(&ParamVector::zeros(&arch), &arch, &data, &LazyConfig::new(lambda).unwrap()).unwrap();
        // Exact ridge on [X, 1] by LU.
        let z = DMatrix::from_fn(n, p + 1, |r, c| if c < p { data.features()[(r, c)] } else { 1.0 });
        let a = z.transpose() * &z + DMatrix::identity(p + 1, p + 1) * lambda;
        let exact = a.lu().solve(&(z.transpose() * data.responses())).unwrap();
        for (u, v) in lazy.values().iter().zip(exact.iter()) {
            worst_linear = worst_linear.max((u - v).abs());
        }
    }
    r.check(
        "lazy_closed_form",
        worst < 1e-8 && worst_linear < 1e-9,
        format!(
            "dual vs primal max abs diff {worst:.2e} on 100 instances (< 1e-8); linear model vs exact ridge {worst_linear:.2e} (< 1e-9)"
        ),
    );
}

// ---------------------------------------------------------------------------
// Parameter Jacobians against central differences.

fn gradient_fidelity(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for draw in 0..100 {
        let p = rng.random_range(1..=6);
        let depth = rng.random_range(0..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=8)).collect();
        let act = [Activation::Tanh, Activation::Sigmoid, Activation::Relu][draw % 3];
        let arch = MlpArchitecture::new(p, hidden, act).unwrap();
        let theta = init_params(&arch, draw as u64);
        let x: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        let jac = param_jacobian(&theta, &arch, &DMatrix::from_row_slice(1, p, &x)).unwrap();
        let mut diff = 0.0f64;
        let mut norm = 0.0f64;
        for k in 0..theta.len() {
            let mut plus = theta.values().to_vec();
            let mut minus = plus.clone();
            plus[k] += h;
            minus[k] -= h;
            let fp = forward(&ParamVector::new(&arch, plus).unwrap(), &arch, &x).unwrap();
            let fm = forward(&ParamVector::new(&arch, minus).unwrap(), &arch, &x).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            diff += (jac[(0, k)] - fd).powi(2);
            norm += fd * fd;
        }
        worst = worst.max(diff.sqrt() / norm.sqrt().max(1e-12));
    }
    r.check(
        "gradient_fidelity",
        worst < 1e-4,
        format!("worst relative error |J - FD| / |FD| = {worst:.2e} over 100 draws (< 1e-4)"),
    );
}

// ---------------------------------------------------------------------------
// Private mechanisms.

fn dp_mechanisms(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut clip_ok = true;
    for _ in 0..10_000 {
        let dim = rng.random_range(1..=1000);
        let scale = 10f64.powf(rng.random_range(-6.0..6.0));
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let g: Vec<f64> = (0..dim).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); scale * z }).collect();
        let out = clip_gradient(&g, c).unwrap();
        clip_ok &= out.iter().map(|v| v * v).sum::<f64>().sqrt() <= c;
    }

    let arch = MlpArchitecture::new(3, vec![6, 4], Activation::Tanh).unwrap();
    let x = DMatrix::from_fn(25, 3, |_, _| StandardNormal.sample(&mut rng));
    let y = DVector::from_fn(25, |_, _| StandardNormal.sample(&mut rng));
    let data = RegressionDataset::new(x, y).unwrap();
    let cfg = DpSgdConfig {
        noise_scale: 0.0,
        learning_rate: 0.05,
        lot_size: data.len(),
        clip_norm: 1e9,
        iterations: 40,
        target_delta: 1e-3,
        seed: 11,
    };
    let (dp, _) = dp_sgd_train(&data, &arch, &cfg).unwrap();
    let mut gd = init_params(&arch, cfg.seed).into_values();
    for _ in 0..cfg.iterations {
        let theta = ParamVector::new(&arch, gd.clone()).unwrap();
        let grads = batch_loss_gradients(&theta, &arch, &data).unwrap();
        let mut sum = vec![0.0; gd.len()];
        for i in 0..data.len() {
            for (s, g) in sum.iter_mut().zip(grads.row(i).iter()) {
                *s += g;
            }
        }
        for (p, s) in gd.iter_mut().zip(&sum) {
            *p -= cfg.learning_rate * (s / data.len() as f64);
        }
    }
    let gd_identical = dp.values() == gd.as_slice();

    let draws = 100_000;
    let big = MlpArchitecture::new(draws - 1, vec![], Activation::Relu).unwrap();
    let (s, eps) = (0.3, 0.5);
    let noisy = laplace_perturb(&ParamVector::zeros(&big), SensitivityBound::new(s, NormKind::L1).unwrap(), eps, 3).unwrap();
    let mad = noisy.values().iter().map(|v| v.abs()).sum::<f64>() / draws as f64;
    let rel = (mad / (s / eps) - 1.0).abs();

    r.check(
        "dp_mechanisms",
        clip_ok && gd_identical && rel < 0.02,
        format!(
            "clip bound on 1e4 vectors: {clip_ok}; zero-noise DP-SGD equals gradient descent bit-for-bit: {gd_identical}; \
             Laplace MAD off by {:.2}% over 1e5 draws (< 2%)",
            100.0 * rel
        ),
    );
}

fn privacy_curve_info() {
    // Full-batch, single step: the Gaussian mechanism's exact curve.
    let eps = account_privacy(1.0, 1.0, 1, 1e-5).unwrap();
    info(
        "accountant",
        format!("sigma 1, q 1, T 1, delta 1e-5 gives epsilon {eps:.4}; order grid tops out at {}", RDP_ORDERS.last().unwrap()),
    );
}

// ---------------------------------------------------------------------------
// Quantiles and intervals.

/// Ranks for alpha = num / den in exact integer arithmetic.
fn oracle_ranks(n: usize, num: usize, den: usize) -> (usize, usize) {
    let upper = ((den - num) * (n + 1)).div_ceil(den);
    let lower = num * (n + 1) / den;
    (upper, lower)
}

fn quantile_oracle(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let alphas = [(1usize, 20usize), (1, 10), (1, 4)];
    let mut mismatches = 0;
    let mut infinite = 0;
    for i in 0..10_000 {
        let n = if i % 4 == 0 { rng.random_range(1..=12) } else { rng.random_range(1..=500) };
        let v: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.1) { rng.random_range(0..5) as f64 } else { StandardNormal.sample(&mut rng) })
            .collect();
        let (num, den) = alphas[i % 3];
        let alpha = num as f64 / den as f64;
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let (ku, kl) = oracle_ranks(n, num, den);
        let want_up = if ku > n { f64::INFINITY } else { sorted[ku - 1] };
        let want_lo = if kl < 1 { f64::NEG_INFINITY } else { sorted[kl - 1] };
        infinite += usize::from(want_up.is_infinite()) + usize::from(want_lo.is_infinite());
        let got_up = quantile_upper(&v, alpha).unwrap();
        let got_lo = quantile_lower(&v, alpha).unwrap();
        if got_up.to_bits() != want_up.to_bits() || got_lo.to_bits() != want_lo.to_bits() {
            mismatches += 1;
        }
    }
    r.check(
        "quantile_oracle",
        mismatches == 0,
        format!("{mismatches} mismatches against full sort on 1e4 vectors ({infinite} out-of-range cases checked)"),
    );
}

fn relaxation(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut reduction = true;
    let mut nested = true;
    for _ in 0..2000 {
        let n = rng.random_range(1..=60);
        let preds: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let res: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let alpha = rng.random_range(0.01..0.49);
        let jk = jackknife_plus_interval(&preds, &res, alpha).unwrap();
        let at = |nu: f64| dp_lazy_interval(&preds, &res, &IntervalConfig::new(alpha, nu).unwrap()).unwrap();
        reduction &= at(0.0) == jk;
        let mut prev = at(0.0);
        for nu in [0.01, 0.1, 0.5, 1.0, 10.0] {
            let cur = at(nu);
            nested &= cur.contains_interval(&prev);
            prev = cur;
        }
    }
    r.check(
        "relaxation",
        reduction && nested,
        format!("nu = 0 equals jackknife+ exactly: {reduction}; intervals nested in nu: {nested} (2000 cases)"),
    );
}

fn main() {
    let mut r = Report {
        passed: 0,
        failed: Vec::new(),
    };
    lazy_correctness(&mut r);
    gradient_fidelity(&mut r);
    dp_mechanisms(&mut r);
    quantile_oracle(&mut r);
    relaxation(&mut r);
    ridge_jackknife_criterion(&mut r);
    privacy_curve_info();
    simulation_criteria(&mut r);

    let total = r.passed + r.failed.len();
    println!("acceptance: {}/{total} criteria passed", r.passed);
    if !r.failed.is_empty() {
        println!("failed: {}", r.failed.join(", "));
        if std::env::var_os("LAZYPI_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
