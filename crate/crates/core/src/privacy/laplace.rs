use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    #[default]
    L2,
}

/// Sensitivity `s(A)`: the largest change of an algorithm's output, in the
/// given norm, between datasets that differ in one record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBound {
    pub s: f64,
    #[serde(default)]
    pub norm: NormKind,
}

impl SensitivityBound {
    pub fn new(s: f64, norm: NormKind) -> Result<Self> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!("sensitivity must be finite and nonnegative, got {s}")));
        }
        Ok(Self { s, norm })
    }
}

/// One Laplace(0, `scale`) draw as a signed exponential.
pub(crate) fn sample_laplace(rng: &mut rng::Rng, scale: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    if rng.random::<bool>() {
        scale * e
    } else {
        -scale * e
    }
}

/// Output perturbation `theta + xi` with i.i.d. `xi_k ~ Laplace(0, s / epsilon)`.
pub fn laplace_perturb(theta: &ParamVector, s: SensitivityBound, epsilon: f64, seed: u64) -> Result<ParamVector> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let s = SensitivityBound::new(s.s, s.norm)?;
    if s.s == 0.0 {
        return Ok(theta.clone());
    }
    let scale = s.s / epsilon;
    let mut rng = rng::seeded(seed);
    let noise: Vec<f64> = (0..theta.len()).map(|_| sample_laplace(&mut rng, scale)).collect();
    theta.offset_by(&noise)
}
