//! Experiment harness: synthetic and tabular data, seeded train/test trials
//! for every interval method, and manifest-driven comparisons that write
//! plot-ready CSV files.

mod compare;
mod ridge;
mod sim;
mod tabular;
mod trial;

pub use compare::{
    aggregate, load_source, mean_and_se, resolve_manifest, run_comparison, Aggregate, ComparisonOutput,
    DataSource, Provenance, RunManifest, AGGREGATES_FILE, RESOLVED_FILE, RESULTS_FILE,
};
pub use ridge::{ridge_fit, ridge_jackknife_plus, ridge_predict};
pub use sim::{simulate_beta, simulate_data, SimConfig};
pub use tabular::{load_features, load_tabular, write_dataset_csv, TabularData, Transform};
pub use trial::{
    fit_predictor, interval_metrics, run_trial, split_indices, FittedPredictor, Method, ModelConfig,
    PrivacyConfig, SplitConfig, TrainingConfig, TrialConfig, TrialResult,
};
