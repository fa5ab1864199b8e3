//! Empirical quantiles and prediction-interval constructions.
//!
//! `quantile_upper` returns the `ceil((1 - alpha)(n + 1))`-th smallest value
//! and `quantile_lower` the `floor(alpha (n + 1))`-th smallest. Order
//! statistics that fall outside `1..=n` are `+inf` and `-inf` respectively.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalConfig {
    pub alpha: f64,
    /// Additive widening of both endpoints of the private lazy interval.
    #[serde(default)]
    pub relaxation: f64,
}

impl IntervalConfig {
    pub fn new(alpha: f64, relaxation: f64) -> Result<Self> {
        let cfg = Self { alpha, relaxation };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::invalid(format!("alpha must lie in (0, 0.5), got {}", self.alpha)));
        }
        if !(self.relaxation >= 0.0) {
            return Err(Error::invalid(format!("relaxation must be nonnegative, got {}", self.relaxation)));
        }
        Ok(())
    }
}

/// `[lower, upper]` over the extended reals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
}

impl PredictionInterval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(Error::invalid(format!("invalid interval [{lower}, {upper}]")));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    /// `upper - lower`; `+inf` when either end is infinite.
    pub fn width(&self) -> f64 {
        if self.lower.is_infinite() || self.upper.is_infinite() {
            f64::INFINITY
        } else {
            self.upper - self.lower
        }
    }

    pub fn widen(&self, by: f64) -> Self {
        Self {
            lower: self.lower - by,
            upper: self.upper + by,
        }
    }

    /// True when `other` lies inside `self`.
    pub fn contains_interval(&self, other: &PredictionInterval) -> bool {
        self.lower <= other.lower && other.upper <= self.upper
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

// `alpha` is almost always a short decimal such as 0.1 whose binary value sits
// a hair off; without the tolerance `ceil(0.9 * 10)` could become 10 or 9
// depending on rounding.
const INDEX_TOL: f64 = 1e-9;

/// Rank `ceil((1 - alpha)(n + 1))` of the upper quantile (1-based; may exceed n).
pub fn upper_rank(n: usize, alpha: f64) -> usize {
    let x = (1.0 - alpha) * (n as f64 + 1.0);
    (x - INDEX_TOL * x.max(1.0)).ceil().max(0.0) as usize
}

/// Rank `floor(alpha (n + 1))` of the lower quantile (1-based; may be 0).
pub fn lower_rank(n: usize, alpha: f64) -> usize {
    (n + 1).saturating_sub(upper_rank(n, alpha))
}

fn kth_smallest(values: &[f64], k: usize) -> f64 {
    let mut buf = values.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}

fn check_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyInput("quantile input"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("quantile input"));
    }
    Ok(())
}

pub fn quantile_upper(values: &[f64], alpha: f64) -> Result<f64> {
    check_values(values)?;
    check_alpha(alpha)?;
    let k = upper_rank(values.len(), alpha);
    if k > values.len() {
        return Ok(f64::INFINITY);
    }
    Ok(kth_smallest(values, k.max(1)))
}

pub fn quantile_lower(values: &[f64], alpha: f64) -> Result<f64> {
    check_values(values)?;
    check_alpha(alpha)?;
    let k = lower_rank(values.len(), alpha);
    if k < 1 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(kth_smallest(values, k))
}

fn centered(center: f64, residuals: &[f64], alpha: f64) -> Result<PredictionInterval> {
    let abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    let margin = quantile_upper(&abs, alpha)?;
    Ok(PredictionInterval {
        lower: center - margin,
        upper: center + margin,
    })
}

/// `f(x) +/- Q+(|training residuals|)`.
pub fn naive_interval(fhat_x: f64, train_residuals: &[f64], alpha: f64) -> Result<PredictionInterval> {
    centered(fhat_x, train_residuals, alpha)
}

/// `f(x) +/- Q+(|leave-one-out residuals|)`.
pub fn jackknife_interval(fhat_x: f64, loo_residuals: &[f64], alpha: f64) -> Result<PredictionInterval> {
    centered(fhat_x, loo_residuals, alpha)
}

/// `[Q-(f_{-i}(x) - R_i), Q+(f_{-i}(x) + R_i)]`.
pub fn jackknife_plus_interval(
    loo_preds_at_x: &[f64],
    loo_residuals: &[f64],
    alpha: f64,
) -> Result<PredictionInterval> {
    if loo_preds_at_x.len() != loo_residuals.len() {
        return Err(Error::DimensionMismatch {
            context: "leave-one-out predictions vs residuals",
            expected: loo_residuals.len(),
            actual: loo_preds_at_x.len(),
        });
    }
    let lows: Vec<f64> = loo_preds_at_x.iter().zip(loo_residuals).map(|(f, r)| f - r.abs()).collect();
    let highs: Vec<f64> = loo_preds_at_x.iter().zip(loo_residuals).map(|(f, r)| f + r.abs()).collect();
    Ok(PredictionInterval {
        lower: quantile_lower(&lows, alpha)?,
        upper: quantile_upper(&highs, alpha)?,
    })
}

/// The jackknife+ interval widened by `cfg.relaxation` on both sides.
pub fn dp_lazy_interval(
    loo_preds_at_x: &[f64],
    loo_residuals: &[f64],
    cfg: &IntervalConfig,
) -> Result<PredictionInterval> {
    cfg.validate()?;
    Ok(jackknife_plus_interval(loo_preds_at_x, loo_residuals, cfg.alpha)?.widen(cfg.relaxation))
}
