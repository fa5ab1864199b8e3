use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::accountant::account_privacy;
use super::clip::clip_in_place;
use super::PrivacyBudget;
use crate::error::{Error, Result};
use crate::nn::{init_params, per_example_loss_gradients, MlpArchitecture, ParamVector, RegressionDataset};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpSgdConfig {
    /// Noise multiplier: per-lot noise has standard deviation `noise_scale * clip_norm`.
    pub noise_scale: f64,
    pub learning_rate: f64,
    /// Expected lot size; each example joins a lot with probability `lot_size / n`.
    pub lot_size: usize,
    pub clip_norm: f64,
    pub iterations: usize,
    pub target_delta: f64,
    pub seed: u64,
}

impl DpSgdConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid("noise scale must be finite and nonnegative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.lot_size == 0 || self.lot_size > n {
            return Err(Error::invalid(format!("lot size must lie in 1..={n}, got {}", self.lot_size)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip norm must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("DP-SGD needs at least one iteration"));
        }
        if !(self.target_delta > 0.0 && self.target_delta < 1.0) {
            return Err(Error::invalid("target delta must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn sampling_rate(&self, n: usize) -> f64 {
        self.lot_size as f64 / n as f64
    }
}

/// Noisy clipped SGD starting from `init_params(arch, cfg.seed)`.
///
/// Every iteration draws a Poisson lot, clips each per-example gradient to
/// `clip_norm`, adds one `N(0, (noise_scale * clip_norm)^2 I)` vector to the
/// sum and divides by the realized lot size (1 for an empty lot) before the
/// descent step. Returns the final iterate and the accounted budget at
/// `target_delta`.
pub fn dp_sgd_train(
    data: &RegressionDataset,
    arch: &MlpArchitecture,
    cfg: &DpSgdConfig,
) -> Result<(ParamVector, PrivacyBudget)> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    cfg.validate(data.len())?;
    let n = data.len();
    let q = cfg.sampling_rate(n);
    let mut params = init_params(arch, cfg.seed);
    params.check(arch)?;
    if data.dim() != arch.input_dim {
        return Err(Error::DimensionMismatch {
            context: "input features",
            expected: arch.input_dim,
            actual: data.dim(),
        });
    }

    let mut lot_rng = rng::stream(cfg.seed, rng::TAG_LOT_SAMPLING);
    let mut noise_rng = rng::stream(cfg.seed, rng::TAG_GRAD_NOISE);
    let noise_sd = cfg.noise_scale * cfg.clip_norm;
    let m = arch.num_params();
    let mut sum = vec![0.0; m];
    let mut lot = Vec::with_capacity(cfg.lot_size * 2);

    for _ in 0..cfg.iterations {
        lot.clear();
        lot.extend((0..n).filter(|_| lot_rng.random::<f64>() < q));
        sum.iter_mut().for_each(|v| *v = 0.0);

        if !lot.is_empty() {
            let x = data.features().select_rows(&lot);
            let y = DVector::from_iterator(lot.len(), lot.iter().map(|&i| data.responses()[i]));
            let mut grads = per_example_loss_gradients(&params, arch, &x, &y)?;
            for mut g in grads.column_iter_mut() {
                let g = g.as_mut_slice();
                clip_in_place(g, cfg.clip_norm)?;
                for (s, v) in sum.iter_mut().zip(g.iter()) {
                    *s += *v;
                }
            }
        }
        if noise_sd > 0.0 {
            for s in &mut sum {
                let z: f64 = StandardNormal.sample(&mut noise_rng);
                *s += noise_sd * z;
            }
        }

        let count = lot.len().max(1) as f64;
        for (p, s) in params.values_mut().iter_mut().zip(&sum) {
            *p -= cfg.learning_rate * (*s / count);
        }
    }

    if params.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("DP-SGD iterate"));
    }
    let epsilon = account_privacy(cfg.noise_scale, q, cfg.iterations, cfg.target_delta)?;
    Ok((params, PrivacyBudget::new(epsilon, cfg.target_delta)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{batch_loss_gradients, Activation};

    fn toy() -> (RegressionDataset, MlpArchitecture) {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64).sin(), (i as f64 * 0.5).cos()]).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r[0] * r[1] + 0.1).collect();
        (
            RegressionDataset::from_rows(&rows, &ys).unwrap(),
            MlpArchitecture::new(2, vec![5], Activation::Tanh).unwrap(),
        )
    }

    fn cfg(sigma: f64) -> DpSgdConfig {
        DpSgdConfig {
            noise_scale: sigma,
            learning_rate: 0.05,
            lot_size: 4,
            clip_norm: 1.0,
            iterations: 20,
            target_delta: 1e-3,
            seed: 17,
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (data, arch) = toy();
        let a = dp_sgd_train(&data, &arch, &cfg(1.0)).unwrap();
        let b = dp_sgd_train(&data, &arch, &cfg(1.0)).unwrap();
        assert_eq!(a, b);
        assert!(a.1.epsilon.is_finite());
    }

    #[test]
    fn zero_noise_has_infinite_epsilon() {
        let (data, arch) = toy();
        let (_, budget) = dp_sgd_train(&data, &arch, &cfg(0.0)).unwrap();
        assert_eq!(budget.epsilon, f64::INFINITY);
    }

    #[test]
    fn disabled_mechanism_is_full_batch_gradient_descent() {
        let (data, arch) = toy();
        let n = data.len();
        let c = DpSgdConfig {
            noise_scale: 0.0,
            clip_norm: 1e9,
            lot_size: n,
            ..cfg(0.0)
        };
        let (dp, _) = dp_sgd_train(&data, &arch, &c).unwrap();

        let mut theta = init_params(&arch, c.seed);
        for _ in 0..c.iterations {
            let g = batch_loss_gradients(&theta, &arch, &data).unwrap();
            let mut sum = vec![0.0; arch.num_params()];
            for i in 0..n {
                for (k, s) in sum.iter_mut().enumerate() {
                    *s += g[(i, k)];
                }
            }
            for (p, s) in theta.values_mut().iter_mut().zip(&sum) {
                *p -= c.learning_rate * (*s / n as f64);
            }
        }
        assert_eq!(dp.values(), theta.values());
    }

    #[test]
    fn noise_moves_the_iterate() {
        let (data, arch) = toy();
        let quiet = dp_sgd_train(&data, &arch, &cfg(0.0)).unwrap().0;
        let noisy = dp_sgd_train(&data, &arch, &cfg(2.0)).unwrap().0;
        assert_ne!(quiet, noisy);
    }

    #[test]
    fn validation() {
        let (data, arch) = toy();
        for bad in [
            DpSgdConfig { lot_size: 0, ..cfg(1.0) },
            DpSgdConfig { lot_size: 13, ..cfg(1.0) },
            DpSgdConfig { clip_norm: 0.0, ..cfg(1.0) },
            DpSgdConfig { iterations: 0, ..cfg(1.0) },
            DpSgdConfig { target_delta: 1.0, ..cfg(1.0) },
            DpSgdConfig { noise_scale: -1.0, ..cfg(1.0) },
        ] {
            assert!(dp_sgd_train(&data, &arch, &bad).is_err());
        }
        let empty = RegressionDataset::new(nalgebra::DMatrix::zeros(0, 2), DVector::zeros(0)).unwrap();
        assert!(matches!(dp_sgd_train(&empty, &arch, &cfg(1.0)), Err(Error::EmptyInput(_))));
    }
}
