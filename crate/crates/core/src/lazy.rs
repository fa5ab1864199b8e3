//! Linearized ("lazy") leave-one-out refits.
//!
//! Around a base parameter vector `theta0` the network is replaced by its
//! first-order expansion `f(x; theta0) + J(x) delta`, and the leave-one-out
//! fit minimizes squared error plus `lambda |delta|^2`. With `J` the
//! `(n-1) x M` Jacobian on the retained rows and `r` their residuals at
//! `theta0`, the minimizer is
//!
//! ```text
//! delta = J^T (J J^T + lambda I)^{-1} r
//! ```
//!
//! which only needs an `(n-1) x (n-1)` Cholesky solve. When `M >> n` this is
//! far cheaper than the primal `(J^T J + lambda I)^{-1} J^T r`, which is kept
//! for cross-checking.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervals::{dp_lazy_interval, IntervalConfig, PredictionInterval};
use crate::nn::{
    batch_forward, forward, jacobian_columns, MlpArchitecture, ParamVector, RegressionDataset, TangentFactors,
};
use crate::rng;

fn default_true() -> bool {
    true
}

/// How a leave-one-out model is evaluated at new inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LooEvaluation {
    /// Run the network at the refitted parameters `theta0 + delta_j`.
    #[default]
    Network,
    /// Use the linear model `f(x; theta0) + J(x) delta_j` that the refit
    /// actually optimized, evaluated through the tangent kernel.
    Linearized,
}

impl std::fmt::Display for LooEvaluation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LooEvaluation::Network => "network",
            LooEvaluation::Linearized => "linearized",
        })
    }
}

impl std::str::FromStr for LooEvaluation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "network" => Ok(LooEvaluation::Network),
            "linearized" => Ok(LooEvaluation::Linearized),
            other => Err(Error::invalid(format!("unknown LOO evaluation `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LazyConfig {
    pub ridge_lambda: f64,
    /// Compute the full-data Jacobian once and drop row j per solve.
    #[serde(default = "default_true")]
    pub jacobian_reuse: bool,
    #[serde(default)]
    pub evaluation: LooEvaluation,
}

impl LazyConfig {
    pub fn new(ridge_lambda: f64) -> Result<Self> {
        let cfg = Self {
            ridge_lambda,
            jacobian_reuse: true,
            evaluation: LooEvaluation::Network,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_lambda > 0.0 && self.ridge_lambda.is_finite()) {
            return Err(Error::invalid(format!("ridge lambda must be positive, got {}", self.ridge_lambda)));
        }
        Ok(())
    }
}

/// The dual ridge system `(G + lambda I) c = r` over the retained rows.
#[derive(Clone, Debug)]
pub struct GramSystem {
    gram: DMatrix<f64>,
    ridge: f64,
    residual_rhs: DVector<f64>,
}

impl GramSystem {
    /// Symmetrizes `gram` as `(G + G^T) / 2`.
    pub fn new(gram: DMatrix<f64>, ridge: f64, residual_rhs: DVector<f64>) -> Result<Self> {
        if !gram.is_square() || gram.nrows() != residual_rhs.len() {
            return Err(Error::DimensionMismatch {
                context: "Gram system",
                expected: residual_rhs.len(),
                actual: gram.nrows(),
            });
        }
        let gram = (&gram + gram.transpose()) * 0.5;
        Ok(Self {
            gram,
            ridge,
            residual_rhs,
        })
    }

    fn from_symmetric(gram: DMatrix<f64>, ridge: f64, residual_rhs: DVector<f64>) -> Self {
        Self {
            gram,
            ridge,
            residual_rhs,
        }
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn residual_rhs(&self) -> &DVector<f64> {
        &self.residual_rhs
    }

    /// Dual coefficients `c = (G + lambda I)^{-1} r`.
    pub fn solve(&self) -> Result<DVector<f64>> {
        let dim = self.gram.nrows();
        let mut system = self.gram.clone();
        for i in 0..dim {
            system[(i, i)] += self.ridge;
        }
        let chol = Cholesky::new(system).ok_or(Error::Cholesky { dim, ridge: self.ridge })?;
        Ok(chol.solve(&self.residual_rhs))
    }
}

fn check_base(theta0: &ParamVector, arch: &MlpArchitecture, data: &RegressionDataset) -> Result<()> {
    theta0.check(arch)?;
    if data.is_empty() {
        return Err(Error::EmptyInput("lazy refit data"));
    }
    Ok(())
}

/// Dual coefficients on `data` and the transposed Jacobian they multiply.
fn dual_solve(
    theta0: &ParamVector,
    arch: &MlpArchitecture,
    data: &RegressionDataset,
    ridge_lambda: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (base, jt) = jacobian_columns(theta0, arch, data.features())?;
    let residual = data.responses() - base;
    let gram = jt.transpose() * &jt;
    let coef = GramSystem::new(gram, ridge_lambda, residual)?.solve()?;
    Ok((coef, jt))
}

/// `theta0 + J^T (J J^T + lambda I)^{-1} (Y - f(X; theta0))` on `data`.
pub fn lazy_solve(
    theta0: &ParamVector,
    arch: &MlpArchitecture,
    data: &RegressionDataset,
    cfg: &LazyConfig,
) -> Result<ParamVector> {
    cfg.validate()?;
    check_base(theta0, arch, data)?;
    let (coef, jt) = dual_solve(theta0, arch, data, cfg.ridge_lambda)?;
    theta0.offset_by((jt * coef).as_slice())
}

/// The same estimate through the `M x M` primal system `(J^T J + lambda I)`.
pub fn lazy_solve_primal(
    theta0: &ParamVector,
    arch: &MlpArchitecture,
    data: &RegressionDataset,
    ridge_lambda: f64,
) -> Result<ParamVector> {
    LazyConfig::new(ridge_lambda)?;
    check_base(theta0, arch, data)?;
    let (base, jt) = jacobian_columns(theta0, arch, data.features())?;
    let residual = data.responses() - base;
    let mut normal = &jt * jt.transpose();
    let dim = normal.nrows();
    for i in 0..dim {
        normal[(i, i)] += ridge_lambda;
    }
    let chol = Cholesky::new(normal).ok_or(Error::Cholesky { dim, ridge: ridge_lambda })?;
    let delta = chol.solve(&(jt * residual));
    theta0.offset_by(delta.as_slice())
}

/// Leave-one-out lazy parameters and residuals for every training row.
#[derive(Clone, Debug)]
pub struct LooFit {
    pub loo_params: Vec<ParamVector>,
    pub loo_residuals: Vec<f64>,
    pub base_params: ParamVector,
    linearized: Option<LinearizedLoo>,
}

/// Tangent factors of the training rows at `theta0` and the dual
/// coefficients of every refit, column j zero at row j.
#[derive(Clone, Debug)]
struct LinearizedLoo {
    train: TangentFactors,
    coef: DMatrix<f64>,
}

impl LinearizedLoo {
    fn predict(&self, at: &TangentFactors) -> DMatrix<f64> {
        let mut out = at.kernel(&self.train) * &self.coef;
        for mut col in out.column_iter_mut() {
            col += &at.outputs;
        }
        out
    }
}

impl LooFit {
    pub fn len(&self) -> usize {
        self.loo_params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loo_params.is_empty()
    }

    pub fn evaluation(&self) -> LooEvaluation {
        if self.linearized.is_some() {
            LooEvaluation::Linearized
        } else {
            LooEvaluation::Network
        }
    }

    /// `m x n` matrix whose column j holds the held-out-j model at the m rows of `x`.
    pub fn predict(&self, arch: &MlpArchitecture, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.linearized {
            None => loo_predictions(&self.loo_params, arch, x),
            Some(lin) => Ok(lin.predict(&TangentFactors::new(&self.base_params, arch, x)?)),
        }
    }

    /// Relaxed jackknife+ interval at every row of `x`.
    pub fn intervals(
        &self,
        arch: &MlpArchitecture,
        x: &DMatrix<f64>,
        cfg: &IntervalConfig,
    ) -> Result<Vec<PredictionInterval>> {
        let preds = self.predict(arch, x)?;
        (0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = preds.row(i).iter().copied().collect();
                dp_lazy_interval(&row, &self.loo_residuals, cfg)
            })
            .collect()
    }
}

/// Column j holds the predictions of `params[j]` on every row of `x`.
pub fn loo_predictions(params: &[ParamVector], arch: &MlpArchitecture, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cols = params
        .iter()
        .map(|p| batch_forward(p, arch, x))
        .collect::<Result<Vec<_>>>()?;
    if cols.is_empty() {
        return Ok(DMatrix::zeros(x.nrows(), 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Runs the lazy refit with each training row held out in turn.
///
/// With `jacobian_reuse` the Jacobian and Gram matrix are built once on all n
/// rows; solve j then uses the Gram matrix with row and column j deleted. The
/// n solves are independent and run on the current rayon pool.
pub fn fit_all_loo(
    theta0: &ParamVector,
    arch: &MlpArchitecture,
    data: &RegressionDataset,
    cfg: &LazyConfig,
) -> Result<LooFit> {
    cfg.validate()?;
    theta0.check(arch)?;
    let n = data.len();
    if n < 2 {
        return Err(Error::invalid(format!("leave-one-out needs at least 2 rows, got {n}")));
    }

    let solved: Vec<(DVector<f64>, ParamVector)> = if cfg.jacobian_reuse {
        let (base, jt) = jacobian_columns(theta0, arch, data.features())?;
        let residual = data.responses() - base;
        let gram = jt.transpose() * &jt;
        let gram = (&gram + gram.transpose()) * 0.5;
        (0..n)
            .into_par_iter()
            .map(|j| {
                let sub = gram.clone().remove_row(j).remove_column(j);
                let rhs = residual.clone().remove_row(j);
                let coef = GramSystem::from_symmetric(sub, cfg.ridge_lambda, rhs).solve()?;
                let full = coef.insert_row(j, 0.0);
                let params = theta0.offset_by((&jt * &full).as_slice())?;
                Ok((full, params))
            })
            .collect::<Result<_>>()?
    } else {
        (0..n)
            .into_par_iter()
            .map(|j| {
                let (coef, jt) = dual_solve(theta0, arch, &data.without(j), cfg.ridge_lambda)?;
                let params = theta0.offset_by((jt * &coef).as_slice())?;
                Ok((coef.insert_row(j, 0.0), params))
            })
            .collect::<Result<_>>()?
    };
    let (coefs, loo_params): (Vec<_>, Vec<_>) = solved.into_iter().unzip();

    let (loo_residuals, linearized) = match cfg.evaluation {
        LooEvaluation::Network => {
            let residuals = loo_params
                .iter()
                .enumerate()
                .map(|(j, p)| Ok((data.responses()[j] - forward(p, arch, &data.row(j))?).abs()))
                .collect::<Result<Vec<f64>>>()?;
            (residuals, None)
        }
        LooEvaluation::Linearized => {
            let lin = LinearizedLoo {
                train: TangentFactors::new(theta0, arch, data.features())?,
                coef: DMatrix::from_columns(&coefs),
            };
            let fitted = lin.predict(&lin.train);
            let residuals = (0..n).map(|j| (data.responses()[j] - fitted[(j, j)]).abs()).collect();
            (residuals, Some(lin))
        }
    };

    Ok(LooFit {
        loo_params,
        loo_residuals,
        base_params: theta0.clone(),
        linearized,
    })
}

/// A randomized fitting procedure, e.g. DP-SGD on a given dataset.
pub trait Trainer {
    fn train(&self, data: &RegressionDataset, seed: u64) -> Result<ParamVector>;
}

impl<F> Trainer for F
where
    F: Fn(&RegressionDataset, u64) -> Result<ParamVector>,
{
    fn train(&self, data: &RegressionDataset, seed: u64) -> Result<ParamVector> {
        self(data, seed)
    }
}

/// Trains the initializer on the data with row `j` removed, then runs the lazy
/// refit on that same reduced data around it.
pub fn lazy_solve_deleted_init<T: Trainer + ?Sized>(
    data: &RegressionDataset,
    j: usize,
    arch: &MlpArchitecture,
    cfg: &LazyConfig,
    trainer: &T,
    seed: u64,
) -> Result<ParamVector> {
    if j >= data.len() {
        return Err(Error::invalid(format!("row {j} out of range for {} rows", data.len())));
    }
    let reduced = data.without(j);
    let init = trainer.train(&reduced, seed)?;
    lazy_solve(&init, arch, &reduced, cfg)
}

/// Monte-Carlo estimate of the out-of-sample instability
/// `P(|f(x; theta_{n,-j}) - f(x; theta_{-j,-j})| > nu / 2)`.
///
/// Each trial retrains on the full data, draws one held-out index j, builds
/// both lazy estimates for it (one linearized at the full-data fit, one at a
/// fit that never saw row j) and compares them at every test point.
#[allow(clippy::too_many_arguments)]
pub fn estimate_stability<T: Trainer + ?Sized>(
    data: &RegressionDataset,
    test_points: &DMatrix<f64>,
    arch: &MlpArchitecture,
    cfg: &LazyConfig,
    trainer: &T,
    nu: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::invalid("stability estimation needs at least one trial"));
    }
    if test_points.nrows() == 0 {
        return Err(Error::EmptyInput("stability test points"));
    }
    if !(nu >= 0.0) {
        return Err(Error::invalid(format!("nu must be nonnegative, got {nu}")));
    }
    if data.len() < 2 {
        return Err(Error::invalid("stability estimation needs at least 2 rows"));
    }
    let mut pick = rng::stream(seed, rng::TAG_STABILITY);
    let mut exceed = 0usize;
    for t in 0..trials {
        let trial_seed = rng::derive_seed(seed, t as u64);
        let j = pick.random_range(0..data.len());
        let reduced = data.without(j);
        let full_init = trainer.train(data, rng::derive_seed(trial_seed, 0))?;
        let from_full = lazy_solve(&full_init, arch, &reduced, cfg)?;
        let from_deleted = lazy_solve_deleted_init(data, j, arch, cfg, trainer, rng::derive_seed(trial_seed, 1))?;
        let a = batch_forward(&from_full, arch, test_points)?;
        let b = batch_forward(&from_deleted, arch, test_points)?;
        exceed += a.iter().zip(b.iter()).filter(|(x, y)| (*x - *y).abs() > nu / 2.0).count();
    }
    Ok(exceed as f64 / (trials * test_points.nrows()) as f64)
}
