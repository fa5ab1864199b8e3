use nalgebra::{DMatrix, DVector};
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::RegressionDataset;
use crate::rng;

/// Synthetic regression design: `X ~ N(0, x_scale I_p)`,
/// `beta_k ~ Beta(beta_a, beta_b)` drawn once per dataset, and
/// `Y = sqrt(max(X beta, 0)) + N(0, noise_sd^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_samples: usize,
    pub dim: usize,
    #[serde(default = "SimConfig::default_x_scale")]
    pub x_scale: f64,
    #[serde(default = "SimConfig::default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default = "SimConfig::default_beta_a")]
    pub beta_a: f64,
    #[serde(default = "SimConfig::default_beta_b")]
    pub beta_b: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    fn default_x_scale() -> f64 {
        5.0
    }
    fn default_noise_sd() -> f64 {
        0.5
    }
    fn default_beta_a() -> f64 {
        1.0
    }
    fn default_beta_b() -> f64 {
        2.5
    }

    pub fn new(n_samples: usize, dim: usize, seed: u64) -> Self {
        Self {
            n_samples,
            dim,
            x_scale: Self::default_x_scale(),
            noise_sd: Self::default_noise_sd(),
            beta_a: Self::default_beta_a(),
            beta_b: Self::default_beta_b(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::invalid("simulation needs at least 2 samples"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if !(self.x_scale > 0.0 && self.x_scale.is_finite()) {
            return Err(Error::invalid("x_scale must be positive"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::invalid("noise_sd must be nonnegative"));
        }
        if !(self.beta_a > 0.0 && self.beta_b > 0.0) {
            return Err(Error::invalid("Beta parameters must be positive"));
        }
        Ok(())
    }
}

/// Draws the coefficient vector for `cfg`.
pub fn simulate_beta(cfg: &SimConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let beta = Beta::new(cfg.beta_a, cfg.beta_b).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng::stream(cfg.seed, rng::TAG_SIM_BETA);
    Ok((0..cfg.dim).map(|_| beta.sample(&mut rng)).collect())
}

pub fn simulate_data(cfg: &SimConfig) -> Result<RegressionDataset> {
    let beta = simulate_beta(cfg)?;
    let x_dist = Normal::new(0.0, cfg.x_scale.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng::stream(cfg.seed, rng::TAG_SIM_ROWS);
    let (n, p) = (cfg.n_samples, cfg.dim);
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let mut dot = 0.0;
        for k in 0..p {
            let v = x_dist.sample(&mut rng);
            x[(i, k)] = v;
            dot += v * beta[k];
        }
        y[i] = dot.max(0.0).sqrt() + noise.sample(&mut rng);
    }
    RegressionDataset::new(x, y)
}
