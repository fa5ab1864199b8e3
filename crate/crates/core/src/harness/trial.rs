use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervals::{
    jackknife_interval, jackknife_plus_interval, naive_interval, IntervalConfig, PredictionInterval,
};
use crate::lazy::{fit_all_loo, loo_predictions, LazyConfig, LooEvaluation, LooFit};
use crate::nn::{batch_forward, sgd_train, Activation, MlpArchitecture, ParamVector, RegressionDataset, SgdConfig};
use crate::privacy::{account_privacy, calibrate_noise, dp_sgd_train, DpSgdConfig};
use crate::rng;

/// Interval construction compared by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    Jackknife,
    JackknifePlus,
    LazyFinetune,
    DpLazy,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Naive,
        Method::Jackknife,
        Method::JackknifePlus,
        Method::LazyFinetune,
        Method::DpLazy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Jackknife => "jackknife",
            Method::JackknifePlus => "jackknife_plus",
            Method::LazyFinetune => "lazy_finetune",
            Method::DpLazy => "dp_lazy",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('-', "_").replace('+', "_plus").to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 10,
            epochs: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacyConfig {
    /// Nominal target, used to calibrate `noise_scale` when that is unset.
    pub epsilon: f64,
    pub delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    pub clip_norm: f64,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            delta: 1e-3,
            noise_scale: None,
            clip_norm: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub n_train: usize,
    /// Test rows drawn after the training rows; all remaining rows when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            n_train: 100,
            n_test: None,
        }
    }
}

/// Everything one trial needs besides the data, the method and the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub privacy: PrivacyConfig,
    pub lazy: LazyConfig,
    pub interval: IntervalConfig,
    pub split: SplitConfig,
    /// Rayon threads available inside one trial (LOO solves, LOO trainings).
    pub intra_trial_threads: usize,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            privacy: PrivacyConfig::default(),
            lazy: LazyConfig {
                ridge_lambda: 10.0,
                jacobian_reuse: true,
                evaluation: LooEvaluation::Network,
            },
            interval: IntervalConfig {
                alpha: 0.1,
                relaxation: 0.0,
            },
            split: SplitConfig::default(),
            intra_trial_threads: 1,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        self.sgd_config(0).validate()?;
        if self.training.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        let p = &self.privacy;
        if !(p.epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", p.epsilon)));
        }
        if !(p.delta > 0.0 && p.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", p.delta)));
        }
        if let Some(s) = p.noise_scale {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("noise scale must be finite and nonnegative, got {s}")));
            }
        }
        if !(p.clip_norm > 0.0) {
            return Err(Error::invalid("clip norm must be positive"));
        }
        self.lazy.validate()?;
        self.interval.validate()?;
        if self.split.n_train < 2 {
            return Err(Error::invalid("n_train must be at least 2"));
        }
        if self.split.n_test == Some(0) {
            return Err(Error::invalid("n_test must be positive"));
        }
        if self.training.batch_size > self.split.n_train {
            return Err(Error::invalid("batch size cannot exceed n_train"));
        }
        if self.intra_trial_threads == 0 {
            return Err(Error::invalid("intra_trial_threads must be positive"));
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize) -> Result<MlpArchitecture> {
        MlpArchitecture::new(input_dim, self.model.hidden.clone(), self.model.activation)
    }

    /// DP-SGD steps matching the SGD budget: `epochs * ceil(n / batch_size)`.
    pub fn dp_iterations(&self, n: usize) -> usize {
        self.training.epochs * n.div_ceil(self.training.batch_size)
    }

    pub fn sampling_rate(&self, n: usize) -> f64 {
        self.training.batch_size as f64 / n as f64
    }

    /// The configured noise multiplier, or the smallest one meeting the
    /// nominal epsilon on `n` training rows.
    pub fn resolve_noise_scale(&self, n: usize) -> Result<f64> {
        match self.privacy.noise_scale {
            Some(s) => Ok(s),
            None => calibrate_noise(self.privacy.epsilon, self.sampling_rate(n), self.dp_iterations(n), self.privacy.delta),
        }
    }

    /// Epsilon actually spent at `noise_scale` on `n` training rows.
    pub fn accounted_epsilon(&self, n: usize, noise_scale: f64) -> Result<f64> {
        account_privacy(noise_scale, self.sampling_rate(n), self.dp_iterations(n), self.privacy.delta)
    }

    pub fn sgd_config(&self, seed: u64) -> SgdConfig {
        SgdConfig {
            learning_rate: self.training.learning_rate,
            batch_size: self.training.batch_size,
            epochs: self.training.epochs,
            seed,
        }
    }

    /// DP-SGD settings for `n` training rows.
    pub fn dp_config(&self, n: usize, noise_scale: f64, seed: u64) -> DpSgdConfig {
        DpSgdConfig {
            noise_scale,
            learning_rate: self.training.learning_rate,
            lot_size: self.training.batch_size,
            clip_norm: self.privacy.clip_norm,
            iterations: self.dp_iterations(n),
            target_delta: self.privacy.delta,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
enum Fitted {
    /// Full fit plus residuals (training or leave-one-out) around it.
    Centered { params: ParamVector, residuals: Vec<f64> },
    LooNetworks { params: Vec<ParamVector>, residuals: Vec<f64> },
    Lazy(LooFit),
}

/// A trained interval predictor for one method.
#[derive(Clone, Debug)]
pub struct FittedPredictor {
    method: Method,
    arch: MlpArchitecture,
    interval: IntervalConfig,
    fitted: Fitted,
    accounted_epsilon: Option<f64>,
}

impl FittedPredictor {
    pub fn method(&self) -> Method {
        self.method
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    /// Privacy spent by the base fit, for `dp_lazy` only.
    pub fn accounted_epsilon(&self) -> Option<f64> {
        self.accounted_epsilon
    }

    /// Leave-one-out (or training) absolute residuals the intervals use.
    pub fn residuals(&self) -> &[f64] {
        match &self.fitted {
            Fitted::Centered { residuals, .. } | Fitted::LooNetworks { residuals, .. } => residuals,
            Fitted::Lazy(fit) => &fit.loo_residuals,
        }
    }

    pub fn intervals(&self, x: &DMatrix<f64>) -> Result<Vec<PredictionInterval>> {
        let alpha = self.interval.alpha;
        match &self.fitted {
            Fitted::Centered { params, residuals } => {
                let centers = batch_forward(params, &self.arch, x)?;
                centers
                    .iter()
                    .map(|&c| match self.method {
                        Method::Naive => naive_interval(c, residuals, alpha),
                        _ => jackknife_interval(c, residuals, alpha),
                    })
                    .collect()
            }
            Fitted::LooNetworks { params, residuals } => {
                let preds = loo_predictions(params, &self.arch, x)?;
                (0..x.nrows())
                    .map(|i| {
                        let row: Vec<f64> = preds.row(i).iter().copied().collect();
                        jackknife_plus_interval(&row, residuals, alpha)
                    })
                    .collect()
            }
            Fitted::Lazy(fit) => fit.intervals(&self.arch, x, &self.interval),
        }
    }
}

fn abs_residuals(params: &ParamVector, arch: &MlpArchitecture, data: &RegressionDataset) -> Result<Vec<f64>> {
    let preds = batch_forward(params, arch, data.features())?;
    Ok(data.responses().iter().zip(preds.iter()).map(|(y, f)| (y - f).abs()).collect())
}

/// Per-row initialization seeds for the leave-one-out networks.
fn loo_seed(seed: u64, j: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(seed, rng::TAG_LOO_INIT), j as u64)
}

fn train_loo_networks(
    train: &RegressionDataset,
    arch: &MlpArchitecture,
    cfg: &TrialConfig,
    seed: u64,
) -> Result<(Vec<ParamVector>, Vec<f64>)> {
    use rayon::prelude::*;
    (0..train.len())
        .into_par_iter()
        .map(|j| {
            let params = sgd_train(&train.without(j), arch, &cfg.sgd_config(loo_seed(seed, j)))?;
            let fx = crate::nn::forward(&params, arch, &train.row(j))?;
            Ok((params, (train.responses()[j] - fx).abs()))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

/// Trains `method` on `train`. Runs on the current rayon pool.
///
/// `noise_scale` overrides the config's privacy section; pass `None` to use
/// the configured value or calibrate one from the nominal epsilon.
pub fn fit_predictor(
    method: Method,
    train: &RegressionDataset,
    cfg: &TrialConfig,
    noise_scale: Option<f64>,
    seed: u64,
) -> Result<FittedPredictor> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::invalid("training set needs at least 2 rows"));
    }
    let arch = cfg.architecture(train.dim())?;
    let n = train.len();
    let base_seed = rng::derive_seed(seed, rng::TAG_INIT);
    let mut accounted_epsilon = None;
    let fitted = match method {
        Method::Naive => {
            let params = sgd_train(train, &arch, &cfg.sgd_config(base_seed))?;
            let residuals = abs_residuals(&params, &arch, train)?;
            Fitted::Centered { params, residuals }
        }
        Method::Jackknife => {
            let params = sgd_train(train, &arch, &cfg.sgd_config(base_seed))?;
            let (_, residuals) = train_loo_networks(train, &arch, cfg, seed)?;
            Fitted::Centered { params, residuals }
        }
        Method::JackknifePlus => {
            let (params, residuals) = train_loo_networks(train, &arch, cfg, seed)?;
            Fitted::LooNetworks { params, residuals }
        }
        Method::LazyFinetune | Method::DpLazy => {
            let sigma = match method {
                Method::LazyFinetune => 0.0,
                _ => match noise_scale {
                    Some(s) => s,
                    None => cfg.resolve_noise_scale(n)?,
                },
            };
            let (theta, budget) = dp_sgd_train(train, &arch, &cfg.dp_config(n, sigma, base_seed))?;
            if method == Method::DpLazy {
                accounted_epsilon = Some(budget.epsilon);
            }
            Fitted::Lazy(fit_all_loo(&theta, &arch, train, &cfg.lazy)?)
        }
    };
    Ok(FittedPredictor {
        method,
        arch,
        interval: cfg.interval,
        fitted,
        accounted_epsilon,
    })
}

/// Deterministic train/test row indices for `seed`.
pub fn split_indices(n_rows: usize, split: &SplitConfig, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if split.n_train >= n_rows {
        return Err(Error::invalid(format!(
            "n_train = {} leaves no test rows out of {n_rows}",
            split.n_train
        )));
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut rng::stream(seed, rng::TAG_SPLIT));
    let available = n_rows - split.n_train;
    let n_test = split.n_test.unwrap_or(available);
    if n_test > available {
        return Err(Error::invalid(format!("n_test = {n_test} exceeds the {available} rows left after training")));
    }
    let test = order[split.n_train..split.n_train + n_test].to_vec();
    order.truncate(split.n_train);
    Ok((order, test))
}

/// Metrics for one (method, trial) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub method: Method,
    pub trial: usize,
    pub seed: u64,
    pub coverage: f64,
    pub avg_width: f64,
    pub train_seconds: f64,
    pub eval_seconds: f64,
    #[serde(skip)]
    pub accounted_epsilon: Option<f64>,
}

/// Coverage and mean width; the width is `+inf` if any interval is unbounded.
pub fn interval_metrics(intervals: &[PredictionInterval], y: &[f64]) -> Result<(f64, f64)> {
    if intervals.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "test responses",
            expected: intervals.len(),
            actual: y.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let m = y.len() as f64;
    let covered = intervals.iter().zip(y).filter(|(iv, &yi)| iv.contains(yi)).count();
    let width = intervals.iter().map(PredictionInterval::width).sum::<f64>() / m;
    Ok((covered as f64 / m, width))
}

fn trial_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))
}

/// Splits `data` by `seed`, fits `method` on the training rows and scores its
/// intervals on the test rows. Training and evaluation are timed separately
/// inside a pool of `cfg.intra_trial_threads` threads.
pub fn run_trial(method: Method, data: &RegressionDataset, cfg: &TrialConfig, seed: u64) -> Result<TrialResult> {
    run_trial_indexed(method, data, cfg, None, 0, seed)
}

pub(crate) fn run_trial_indexed(
    method: Method,
    data: &RegressionDataset,
    cfg: &TrialConfig,
    noise_scale: Option<f64>,
    trial: usize,
    seed: u64,
) -> Result<TrialResult> {
    cfg.validate()?;
    let (train_idx, test_idx) = split_indices(data.len(), &cfg.split, seed)?;
    let train = data.select(&train_idx);
    let test = data.select(&test_idx);
    let noise_scale = match (method, noise_scale) {
        (Method::DpLazy, None) => Some(cfg.resolve_noise_scale(train.len())?),
        (_, s) => s,
    };
    let pool = trial_pool(cfg.intra_trial_threads)?;
    pool.install(|| {
        let start = Instant::now();
        let predictor = fit_predictor(method, &train, cfg, noise_scale, seed)?;
        let train_seconds = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let intervals = predictor.intervals(test.features())?;
        let eval_seconds = start.elapsed().as_secs_f64();
        let (coverage, avg_width) = interval_metrics(&intervals, test.responses().as_slice())?;
        Ok(TrialResult {
            method,
            trial,
            seed,
            coverage,
            avg_width,
            train_seconds,
            eval_seconds,
            accounted_epsilon: predictor.accounted_epsilon(),
        })
    })
}
