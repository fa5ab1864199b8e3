//! Ridge regression on raw features as a cheap symmetric base learner, used
//! to check jackknife+ coverage over many trials.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::intervals::{jackknife_plus_interval, PredictionInterval};
use crate::nn::RegressionDataset;

/// Ridge fit with an intercept column: returns `[w; b]` minimizing
/// `|Y - X w - b|^2 + lambda (|w|^2 + b^2)`.
pub fn ridge_fit(data: &RegressionDataset, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("ridge lambda must be positive, got {lambda}")));
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("ridge training data"));
    }
    let (n, p) = (data.len(), data.dim());
    let z = DMatrix::from_fn(n, p + 1, |i, k| if k < p { data.features()[(i, k)] } else { 1.0 });
    let mut normal = z.transpose() * &z;
    for k in 0..=p {
        normal[(k, k)] += lambda;
    }
    let chol = normal.cholesky().ok_or(Error::Cholesky { dim: p + 1, ridge: lambda })?;
    Ok(chol.solve(&(z.transpose() * data.responses())))
}

pub fn ridge_predict(coef: &DVector<f64>, x: &DMatrix<f64>) -> DVector<f64> {
    let p = x.ncols();
    let mut out = x * coef.rows(0, p);
    out.add_scalar_mut(coef[p]);
    out
}

/// Jackknife+ intervals at the rows of `test_x` with ridge as the base learner.
pub fn ridge_jackknife_plus(
    train: &RegressionDataset,
    test_x: &DMatrix<f64>,
    lambda: f64,
    alpha: f64,
) -> Result<Vec<PredictionInterval>> {
    let n = train.len();
    let mut residuals = Vec::with_capacity(n);
    let mut preds = DMatrix::zeros(test_x.nrows(), n);
    for j in 0..n {
        let coef = ridge_fit(&train.without(j), lambda)?;
        let xj = DMatrix::from_row_slice(1, train.dim(), &train.row(j));
        residuals.push((train.responses()[j] - ridge_predict(&coef, &xj)[0]).abs());
        preds.set_column(j, &ridge_predict(&coef, test_x));
    }
    (0..test_x.nrows())
        .map(|i| {
            let row: Vec<f64> = preds.row(i).iter().copied().collect();
            jackknife_plus_interval(&row, &residuals, alpha)
        })
        .collect()
}
