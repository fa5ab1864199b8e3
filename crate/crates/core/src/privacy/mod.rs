//! Differentially private training and output perturbation.

mod accountant;
mod clip;
mod dp_sgd;
mod laplace;

pub use accountant::{account_privacy, calibrate_noise, coverage_slack, rdp_subsampled_gaussian, rdp_to_epsilon, RDP_ORDERS};
pub use clip::clip_gradient;
pub use dp_sgd::{dp_sgd_train, DpSgdConfig};
pub use laplace::{laplace_perturb, NormKind, SensitivityBound};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `(epsilon, delta)` guarantee. `epsilon` may be `+inf` (no guarantee).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::invalid(format!("epsilon must be nonnegative, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::invalid(format!("delta must lie in [0, 1), got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }
}
