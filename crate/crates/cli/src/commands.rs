use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use lazypi::harness::{
    fit_predictor, interval_metrics, load_features, resolve_manifest, split_indices, write_dataset_csv,
    AGGREGATES_FILE, RESOLVED_FILE, RESULTS_FILE,
};
use lazypi::privacy::{account_privacy, calibrate_noise, coverage_slack};
use lazypi::{
    estimate_stability, load_tabular, run_comparison, simulate_data, DataSource, Error, Method, ParamVector,
    RegressionDataset, Result, RunManifest, SimConfig, Transform,
};

use crate::overrides::ConfigOverrides;
use crate::{AccountantArgs, CompareArgs, IntervalsArgs, SimulateArgs, StabilityArgs};

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = SimConfig {
        x_scale: args.x_scale,
        noise_sd: args.noise_sd,
        ..SimConfig::new(args.n_samples, args.dim, args.seed)
    };
    let data = simulate_data(&cfg)?;
    let path = args.output.unwrap_or_else(|| args.output_dir.join("simulated.csv"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_dataset_csv(&data, BufWriter::new(File::create(&path)?))?;
    println!(
        "wrote {} rows x {} columns ({} features + response) to {}",
        data.len(),
        data.dim() + 1,
        data.dim(),
        path.display()
    );
    Ok(())
}

fn default_manifest(dim: Option<usize>) -> RunManifest {
    let mut m = RunManifest::new(DataSource::Simulate(SimConfig::new(5000, dim.unwrap_or(16), 1)));
    m.name = format!("sim_p{}", dim.unwrap_or(16));
    m
}

fn load_manifest(path: Option<&PathBuf>, dim: Option<usize>, overrides: &ConfigOverrides) -> Result<RunManifest> {
    let mut m = match path {
        Some(p) => RunManifest::from_file(p)?,
        None => default_manifest(dim),
    };
    overrides.apply(&mut m)?;
    Ok(m)
}

fn fmt_seconds(s: f64) -> String {
    format!("{s:.3}s")
}

pub fn compare(args: CompareArgs, verbose: u8) -> Result<()> {
    let manifest = load_manifest(args.manifest.as_ref(), args.dim, &args.overrides)?;
    if args.dry_run {
        let (resolved, provenance, _) = resolve_manifest(&manifest)?;
        print!("{}", resolved.to_toml()?);
        println!("\n# content_hash = {}", provenance.content_hash);
        if let Some(eps) = provenance.accounted_epsilon {
            println!("# accounted_epsilon = {eps}");
        }
        return Ok(());
    }
    let dir = args
        .output_dir
        .unwrap_or_else(|| PathBuf::from("results").join(&manifest.name));
    let out = run_comparison(&manifest, Some(&dir))?;
    if verbose > 0 {
        for r in &out.results {
            println!(
                "  {} trial {} coverage {:.4} width {:.4} train {} eval {}",
                r.method,
                r.trial,
                r.coverage,
                r.avg_width,
                fmt_seconds(r.train_seconds),
                fmt_seconds(r.eval_seconds)
            );
        }
    }
    for a in &out.aggregates {
        println!(
            "{:<15} coverage {:.3} ± {:.3}  width {:.3}  train {}  eval {}  ({} trials)",
            a.method.to_string(),
            a.coverage_mean,
            a.coverage_se,
            a.avg_width_mean,
            fmt_seconds(a.train_seconds_mean),
            fmt_seconds(a.eval_seconds_mean),
            a.trials
        );
    }
    let p = &out.provenance;
    if let (Some(sigma), Some(eps)) = (p.noise_scale, p.accounted_epsilon) {
        println!("noise scale {sigma:.4}, accounted epsilon {eps:.4} (nominal {})", p.nominal_epsilon);
        if p.epsilon_mismatch {
            eprintln!("warning: accounted epsilon exceeds the nominal budget");
        }
    }
    println!(
        "wrote {}, {} and {} to {}",
        RESULTS_FILE,
        AGGREGATES_FILE,
        RESOLVED_FILE,
        dir.display()
    );
    Ok(())
}

pub fn intervals(args: IntervalsArgs) -> Result<()> {
    let transform: Transform = args.transform.parse()?;
    let method: Method = args.method.parse()?;
    let train = load_tabular(&args.train, &args.response, transform)?;
    let mut manifest = match &args.manifest {
        Some(p) => RunManifest::from_file(p)?,
        None => RunManifest::new(DataSource::Csv {
            path: args.train.clone(),
            response: args.response.clone(),
            transform,
        }),
    };
    manifest.config.split.n_train = train.dataset.len();
    args.overrides.apply(&mut manifest)?;
    let cfg = &manifest.config;

    let test_x = load_features(&args.test, &train.feature_names)?;
    let test_y = load_tabular(&args.test, &args.response, transform).ok();
    let predictor = fit_predictor(method, &train.dataset, cfg, None, manifest.seed)?;
    let ivs = predictor.intervals(&test_x)?;

    fs::create_dir_all(&args.output_dir)?;
    let path = args.output_dir.join("intervals.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["row", "lower", "upper"])?;
    for (i, iv) in ivs.iter().enumerate() {
        w.write_record([i.to_string(), iv.lower.to_string(), iv.upper.to_string()])?;
    }
    w.flush()?;

    println!(
        "{method}: {} training rows ({} dropped), {} intervals written to {}",
        train.dataset.len(),
        train.dropped_rows,
        ivs.len(),
        path.display()
    );
    if let Some(eps) = predictor.accounted_epsilon() {
        println!("accounted epsilon {eps:.4} at delta {}", cfg.privacy.delta);
    }
    match test_y {
        Some(t) if t.dropped_rows == 0 && t.dataset.len() == ivs.len() => {
            let (coverage, width) = interval_metrics(&ivs, t.dataset.responses().as_slice())?;
            println!("coverage {coverage:.4}, average width {width:.4}");
        }
        _ => {
            let width = ivs.iter().map(|iv| iv.width()).sum::<f64>() / ivs.len() as f64;
            println!("average width {width:.4}");
        }
    }
    Ok(())
}

pub fn stability(args: StabilityArgs) -> Result<()> {
    let manifest = load_manifest(args.manifest.as_ref(), None, &args.overrides)?;
    if args.test_points == 0 {
        return Err(Error::InvalidConfig("--test-points must be positive".into()));
    }
    let (resolved, _, data) = resolve_manifest(&manifest)?;
    let cfg = resolved.config.clone();
    let (train_idx, test_idx) = split_indices(data.len(), &cfg.split, resolved.trial_seed(0))?;
    let train = data.select(&train_idx);
    let take = args.test_points.min(test_idx.len());
    let test = data.select(&test_idx[..take]);
    let arch = cfg.architecture(train.dim())?;
    let sigma = cfg.resolve_noise_scale(train.len())?;
    let trainer = |d: &RegressionDataset, seed: u64| -> Result<ParamVector> {
        let dp = cfg.dp_config(d.len(), sigma, seed);
        Ok(lazypi::dp_sgd_train(d, &arch, &dp)?.0)
    };
    let eta = estimate_stability(
        &train,
        test.features(),
        &arch,
        &cfg.lazy,
        &trainer,
        cfg.interval.relaxation,
        args.repeats,
        resolved.seed,
    )?;
    let eps = cfg.accounted_epsilon(train.len(), sigma)?;
    let slack = coverage_slack(eta, eps, cfg.privacy.delta);
    println!(
        "estimated eta {eta:.4} at nu = {} over {} repeats x {} test points",
        cfg.interval.relaxation, args.repeats, take
    );
    println!("noise scale {sigma:.4}, accounted epsilon {eps:.4}, delta {}", cfg.privacy.delta);
    println!(
        "coverage slack {slack:.4}; guaranteed coverage >= {:.4}",
        1.0 - 2.0 * cfg.interval.alpha - slack
    );
    Ok(())
}

pub fn accountant(args: AccountantArgs) -> Result<()> {
    if !(args.eta >= 0.0) {
        return Err(Error::InvalidConfig(format!("eta must be nonnegative, got {}", args.eta)));
    }
    if !(args.delta > 0.0 && args.delta < 1.0) {
        return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {}", args.delta)));
    }
    let epsilon = match (args.sigma, args.epsilon) {
        (Some(sigma), _) => {
            let eps = account_privacy(sigma, args.q, args.steps, args.delta)?;
            if sigma == 0.0 {
                eprintln!("warning: zero noise gives no privacy guarantee");
            }
            println!("epsilon {eps} (sigma {sigma}, q {}, steps {}, delta {})", args.q, args.steps, args.delta);
            if let Some(target) = args.epsilon {
                if eps > target {
                    eprintln!("warning: accounted epsilon {eps} exceeds the target {target}");
                }
            }
            eps
        }
        (None, Some(eps)) => {
            if !(eps >= 0.0) {
                return Err(Error::InvalidConfig(format!("epsilon must be nonnegative, got {eps}")));
            }
            println!("epsilon {eps} (given)");
            if eps > 0.0 && args.steps > 0 {
                let sigma = calibrate_noise(eps, args.q, args.steps, args.delta)?;
                println!("noise scale needed: {sigma:.6} (q {}, steps {})", args.q, args.steps);
            }
            eps
        }
        (None, None) => return Err(Error::InvalidConfig("pass --sigma or --epsilon".into())),
    };
    let slack = coverage_slack(args.eta, epsilon, args.delta);
    println!(
        "coverage slack 3*sqrt(2*eta + 2*epsilon + delta) = {slack:.6} (eta {}, delta {})",
        args.eta, args.delta
    );
    Ok(())
}
