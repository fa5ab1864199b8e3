use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sim::{simulate_data, SimConfig};
use super::tabular::{load_tabular, Transform};
use super::trial::{run_trial_indexed, Method, TrialConfig, TrialResult};
use crate::error::{Error, Result};
use crate::nn::RegressionDataset;
use crate::rng;

/// Where the rows of a comparison come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Simulate(SimConfig),
    Csv {
        path: PathBuf,
        response: String,
        #[serde(default)]
        transform: Transform,
    },
}

fn default_name() -> String {
    "comparison".to_owned()
}

fn default_methods() -> Vec<Method> {
    vec![Method::JackknifePlus, Method::LazyFinetune, Method::DpLazy]
}

fn default_trials() -> usize {
    15
}

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

/// A complete, serializable description of a comparison run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Trial t uses seed `derive_seed(seed, t)` for every method.
    #[serde(default)]
    pub seed: u64,
    /// Trials running at once.
    #[serde(default = "default_one")]
    pub workers: usize,
    /// When false, timing columns are written as 0 so reruns are byte-identical.
    #[serde(default = "default_true")]
    pub record_timing: bool,
    pub data: DataSource,
    #[serde(flatten)]
    pub config: TrialConfig,
}

impl RunManifest {
    pub fn new(data: DataSource) -> Self {
        Self {
            name: default_name(),
            methods: default_methods(),
            trials: default_trials(),
            seed: 0,
            workers: 1,
            record_timing: true,
            data,
            config: TrialConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))
    }

    /// Parses a manifest file; a relative CSV path is taken relative to it.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut manifest = Self::from_toml(&fs::read_to_string(path)?)?;
        if let DataSource::Csv { path: csv, .. } = &mut manifest.data {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(manifest)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("manifest needs at least one trial"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("manifest lists no methods"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be positive"));
        }
        if let DataSource::Simulate(sim) = &self.data {
            sim.validate()?;
        }
        self.config.validate()
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        rng::derive_seed(self.seed, trial as u64)
    }
}

/// Mean and standard error of each metric for one method.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub method: Method,
    pub trials: usize,
    pub coverage_mean: f64,
    pub coverage_se: f64,
    pub avg_width_mean: f64,
    pub avg_width_se: f64,
    pub train_seconds_mean: f64,
    pub train_seconds_se: f64,
    pub eval_seconds_mean: f64,
    pub eval_seconds_se: f64,
}

/// Mean and `sd / sqrt(k)` with the `k - 1` sample variance. The SE is NaN
/// for one value and `+inf` whenever the mean is not finite.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if !mean.is_finite() {
        return (mean, f64::INFINITY);
    }
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

pub fn aggregate(results: &[TrialResult], methods: &[Method]) -> Vec<Aggregate> {
    methods
        .iter()
        .filter_map(|&method| {
            let rows: Vec<&TrialResult> = results.iter().filter(|r| r.method == method).collect();
            if rows.is_empty() {
                return None;
            }
            let stat = |f: fn(&TrialResult) -> f64| mean_and_se(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (coverage_mean, coverage_se) = stat(|r| r.coverage);
            let (avg_width_mean, avg_width_se) = stat(|r| r.avg_width);
            let (train_seconds_mean, train_seconds_se) = stat(|r| r.train_seconds);
            let (eval_seconds_mean, eval_seconds_se) = stat(|r| r.eval_seconds);
            Some(Aggregate {
                method,
                trials: rows.len(),
                coverage_mean,
                coverage_se,
                avg_width_mean,
                avg_width_se,
                train_seconds_mean,
                train_seconds_se,
                eval_seconds_mean,
                eval_seconds_se,
            })
        })
        .collect()
}

/// Privacy and input bookkeeping echoed next to the results.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    /// SHA-256 over the canonical manifest and, for CSV input, the file bytes.
    pub content_hash: String,
    pub crate_version: String,
    pub rows: usize,
    pub dropped_rows: usize,
    pub nominal_epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accounted_epsilon: Option<f64>,
    /// True when the accounted epsilon exceeds the nominal one.
    pub epsilon_mismatch: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct Resolved<'a> {
    #[serde(flatten)]
    manifest: &'a RunManifest,
    provenance: &'a Provenance,
}

#[derive(Clone, Debug)]
pub struct ComparisonOutput {
    /// The manifest with the noise scale filled in.
    pub manifest: RunManifest,
    pub provenance: Provenance,
    pub results: Vec<TrialResult>,
    pub aggregates: Vec<Aggregate>,
}

impl ComparisonOutput {
    pub fn resolved_toml(&self) -> Result<String> {
        resolved_toml(&self.manifest, &self.provenance)
    }
}

fn resolved_toml(manifest: &RunManifest, provenance: &Provenance) -> Result<String> {
    toml::to_string(&Resolved { manifest, provenance }).map_err(|e| Error::Manifest(e.to_string()))
}

/// Loads the rows named by `source`, with the count of dropped rows and the
/// raw bytes that identify the input.
pub fn load_source(source: &DataSource) -> Result<(RegressionDataset, usize, Vec<u8>)> {
    match source {
        DataSource::Simulate(sim) => Ok((simulate_data(sim)?, 0, Vec::new())),
        DataSource::Csv {
            path,
            response,
            transform,
        } => {
            let bytes = fs::read(path)?;
            let table = load_tabular(path, response, *transform)?;
            Ok((table.dataset, table.dropped_rows, bytes))
        }
    }
}

/// Resolves the manifest (noise scale, provenance) without running trials.
pub fn resolve_manifest(manifest: &RunManifest) -> Result<(RunManifest, Provenance, RegressionDataset)> {
    manifest.validate()?;
    let (data, dropped_rows, source_bytes) = load_source(&manifest.data)?;
    if manifest.config.split.n_train >= data.len() {
        return Err(Error::invalid(format!(
            "n_train = {} leaves no test rows out of {}",
            manifest.config.split.n_train,
            data.len()
        )));
    }
    let mut hasher = Sha256::new();
    hasher.update(manifest.to_toml()?.as_bytes());
    hasher.update(&source_bytes);
    let content_hash = hex::encode(hasher.finalize());

    let mut resolved = manifest.clone();
    let n = manifest.config.split.n_train;
    let (noise_scale, accounted_epsilon) = if manifest.methods.contains(&Method::DpLazy) {
        let sigma = manifest.config.resolve_noise_scale(n)?;
        resolved.config.privacy.noise_scale = Some(sigma);
        (Some(sigma), Some(manifest.config.accounted_epsilon(n, sigma)?))
    } else {
        (None, None)
    };
    let nominal = manifest.config.privacy.epsilon;
    let provenance = Provenance {
        content_hash,
        crate_version: env!("CARGO_PKG_VERSION").to_owned(),
        rows: data.len(),
        dropped_rows,
        nominal_epsilon: nominal,
        noise_scale,
        accounted_epsilon,
        epsilon_mismatch: accounted_epsilon.is_some_and(|e| e > nominal),
    };
    Ok((resolved, provenance, data))
}

fn fmt_f64(v: f64) -> String {
    v.to_string()
}

fn write_results(path: &Path, results: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "trial", "seed", "coverage", "avg_width", "train_seconds", "eval_seconds"])?;
    for r in results {
        w.write_record([
            r.method.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            fmt_f64(r.coverage),
            fmt_f64(r.avg_width),
            fmt_f64(r.train_seconds),
            fmt_f64(r.eval_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_aggregates(path: &Path, aggregates: &[Aggregate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "trials",
        "coverage_mean",
        "coverage_se",
        "avg_width_mean",
        "avg_width_se",
        "train_seconds_mean",
        "train_seconds_se",
        "eval_seconds_mean",
        "eval_seconds_se",
    ])?;
    for a in aggregates {
        let mut record = vec![a.method.to_string(), a.trials.to_string()];
        record.extend(
            [
                a.coverage_mean,
                a.coverage_se,
                a.avg_width_mean,
                a.avg_width_se,
                a.train_seconds_mean,
                a.train_seconds_se,
                a.eval_seconds_mean,
                a.eval_seconds_se,
            ]
            .map(fmt_f64),
        );
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub const RESULTS_FILE: &str = "results.csv";
pub const AGGREGATES_FILE: &str = "aggregates.csv";
pub const RESOLVED_FILE: &str = "manifest.resolved";

/// Runs every (method, trial) cell of `manifest`, up to `workers` trials at
/// once, and writes `results.csv`, `aggregates.csv` and `manifest.resolved`
/// into `output_dir` when given. Rows are ordered by method, then trial.
///
/// If a cell fails, the rows that did complete are still written before the
/// first error is returned.
pub fn run_comparison(manifest: &RunManifest, output_dir: Option<&Path>) -> Result<ComparisonOutput> {
    let (resolved, provenance, data) = resolve_manifest(manifest)?;
    if let Some(dir) = output_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(RESOLVED_FILE), resolved_toml(&resolved, &provenance)?)?;
    }

    let cells: Vec<(Method, usize)> = resolved
        .methods
        .iter()
        .flat_map(|&m| (0..resolved.trials).map(move |t| (m, t)))
        .collect();
    let noise_scale = resolved.config.privacy.noise_scale;
    let run_cell = |&(method, trial): &(Method, usize)| -> Result<TrialResult> {
        let mut r = run_trial_indexed(
            method,
            &data,
            &resolved.config,
            noise_scale,
            trial,
            resolved.trial_seed(trial),
        )?;
        if !resolved.record_timing {
            r.train_seconds = 0.0;
            r.eval_seconds = 0.0;
        }
        Ok(r)
    };
    // Plain threads rather than a rayon pool: each trial installs its own
    // pool, and a rayon worker blocked on another pool busy-waits.
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<TrialResult>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..resolved.workers.min(cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                *slots[i].lock().expect("slot lock") = Some(run_cell(cell));
            });
        }
    });
    let outcomes = slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every cell ran"));

    let mut results = Vec::with_capacity(cells.len());
    let mut first_error = None;
    for outcome in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let aggregates = aggregate(&results, &resolved.methods);
    if let Some(dir) = output_dir {
        write_results(&dir.join(RESULTS_FILE), &results)?;
        write_aggregates(&dir.join(AGGREGATES_FILE), &aggregates)?;
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    Ok(ComparisonOutput {
        manifest: resolved,
        provenance,
        results,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::trial::{ModelConfig, SplitConfig, TrainingConfig};
    use crate::nn::Activation;

    fn tiny_manifest() -> RunManifest {
        let mut m = RunManifest::new(DataSource::Simulate(SimConfig::new(60, 2, 3)));
        m.trials = 3;
        m.record_timing = false;
        m.config.model = ModelConfig {
            hidden: vec![4],
            activation: Activation::Tanh,
        };
        m.config.training = TrainingConfig {
            learning_rate: 0.01,
            batch_size: 5,
            epochs: 2,
        };
        m.config.split = SplitConfig {
            n_train: 15,
            n_test: Some(20),
        };
        m
    }

    #[test]
    fn manifest_toml_roundtrip_and_defaults() {
        let m = tiny_manifest();
        let text = m.to_toml().unwrap();
        assert_eq!(RunManifest::from_toml(&text).unwrap(), m);
        let minimal = RunManifest::from_toml("[data]\nkind = \"simulate\"\nn_samples = 5000\ndim = 16\n").unwrap();
        assert_eq!(minimal.trials, 15);
        assert_eq!(minimal.methods.len(), 3);
        assert_eq!(minimal.config, TrialConfig::default());
        assert!(RunManifest::from_toml("trials = \"x\"").is_err());
    }

    #[test]
    fn zero_trials_is_a_validation_error() {
        let mut m = tiny_manifest();
        m.trials = 0;
        let err = run_comparison(&m, None).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn single_cell_aggregate_is_the_trial() {
        let mut m = tiny_manifest();
        m.trials = 1;
        m.methods = vec![Method::Naive];
        let out = run_comparison(&m, None).unwrap();
        assert_eq!(out.results.len(), 1);
        let (r, a) = (&out.results[0], &out.aggregates[0]);
        assert_eq!((a.coverage_mean, a.avg_width_mean), (r.coverage, r.avg_width));
        assert!(a.coverage_se.is_nan());
        assert_eq!(out.provenance.noise_scale, None);
    }

    #[test]
    fn standard_error_matches_hand_computation() {
        let (mean, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mean, 2.5);
        assert!((se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(mean_and_se(&[1.0, f64::INFINITY]).0, f64::INFINITY);
    }

    #[test]
    fn rerun_is_byte_identical_and_provenance_is_written() {
        let m = tiny_manifest();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let out = run_comparison(&m, Some(a.path())).unwrap();
        run_comparison(&m, Some(b.path())).unwrap();
        for f in [RESULTS_FILE, AGGREGATES_FILE, RESOLVED_FILE] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let results = fs::read_to_string(a.path().join(RESULTS_FILE)).unwrap();
        assert!(results.starts_with("method,trial,seed,coverage,avg_width,train_seconds,eval_seconds\n"));
        assert_eq!(results.lines().count(), 1 + 3 * 3);
        let resolved = fs::read_to_string(a.path().join(RESOLVED_FILE)).unwrap();
        assert!(resolved.contains("content_hash"));
        assert!(resolved.contains("noise_scale"));
        assert_eq!(out.provenance.epsilon_mismatch, false);
        // The resolved file is itself a runnable manifest.
        let again = RunManifest::from_toml(&resolved).unwrap();
        assert_eq!(again.config.privacy.noise_scale, out.manifest.config.privacy.noise_scale);
    }

    #[test]
    fn fixed_noise_scale_can_overspend() {
        let mut m = tiny_manifest();
        m.methods = vec![Method::DpLazy];
        m.config.privacy.noise_scale = Some(0.5);
        let (_, prov, _) = resolve_manifest(&m).unwrap();
        assert!(prov.epsilon_mismatch);
        assert!(prov.accounted_epsilon.unwrap() > 0.01);
    }

    #[test]
    fn failures_still_write_the_results_file() {
        let mut m = tiny_manifest();
        m.methods = vec![Method::Naive, Method::JackknifePlus];
        m.trials = 2;
        // A learning rate this large diverges for every trained network.
        m.config.training.learning_rate = 1e300;
        let dir = tempfile::tempdir().unwrap();
        assert!(run_comparison(&m, Some(dir.path())).is_err());
        let results = fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
        assert!(results.starts_with("method,"));
    }
}
