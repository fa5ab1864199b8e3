//! Distribution-free prediction intervals for neural-network regression.
//!
//! The main method trains one network with differentially private SGD, then
//! approximates every leave-one-out refit by a ridge problem on the network's
//! linearization around that private fit. The leave-one-out parameters feed a
//! jackknife+ style interval. Naive, jackknife and jackknife+ baselines, along
//! with an experiment harness, are included for comparison.
//!
//! Module map:
//! - [`nn`]: MLP definition, forward passes, per-example Jacobians, SGD.
//! - [`privacy`]: gradient clipping, DP-SGD, Laplace output perturbation and
//!   a Rényi-DP accountant for the subsampled Gaussian mechanism.
//! - [`lazy`]: the linearized leave-one-out operator and stability estimates.
//! - [`intervals`]: order-statistic quantiles and interval constructions.
//! - [`harness`]: synthetic data, CSV ingestion, trials and comparisons.

pub mod error;
pub mod harness;
pub mod intervals;
pub mod lazy;
pub mod nn;
pub mod privacy;
pub mod rng;

pub use error::{Error, Result};
pub use harness::{
    load_tabular, run_comparison, run_trial, simulate_data, ComparisonOutput, DataSource, Method,
    RunManifest, SimConfig, TabularData, Transform, TrialConfig, TrialResult,
};
pub use intervals::{
    dp_lazy_interval, jackknife_interval, jackknife_plus_interval, naive_interval,
    quantile_lower, quantile_upper, IntervalConfig, PredictionInterval,
};
pub use lazy::{
    estimate_stability, fit_all_loo, lazy_solve, lazy_solve_deleted_init, GramSystem,
    LazyConfig, LooEvaluation, LooFit, Trainer,
};
pub use nn::{
    batch_forward, forward, init_params, loss_gradient, param_jacobian, sgd_train, tangent_kernel,
    Activation, MlpArchitecture, ParamVector, RegressionDataset, SgdConfig,
};
pub use privacy::{
    account_privacy, calibrate_noise, clip_gradient, coverage_slack, dp_sgd_train, laplace_perturb,
    DpSgdConfig, NormKind, PrivacyBudget, SensitivityBound,
};
