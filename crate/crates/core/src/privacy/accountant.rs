//! Privacy accounting for DP-SGD.
//!
//! Each step of DP-SGD is a Poisson-subsampled Gaussian mechanism with noise
//! multiplier `sigma` and sampling rate `q`. Its Rényi divergence at order
//! `alpha` is evaluated exactly for integer orders and through the erfc series
//! for fractional ones (Mironov, Talwar and Zhang 2019); `T` steps compose
//! additively and the total converts to `(epsilon, delta)` via the bound of
//! Balle et al. (2020).
//!
//! The full-batch Gaussian mechanism has an exact privacy curve: `T` steps at
//! multiplier `sigma` are `sqrt(T)/sigma`-Gaussian DP. Subsampling can only
//! improve on the full-batch mechanism, so the reported epsilon is the smaller
//! of the two bounds.

use crate::error::{Error, Result};

/// Rényi orders tracked by the accountant.
pub const RDP_ORDERS: &[f64] = &[
    1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0,
    14.0, 15.0, 16.0, 17.0, 18.0, 19.0, 20.0, 21.0, 22.0, 23.0, 24.0, 25.0, 26.0, 27.0, 28.0, 29.0,
    30.0, 31.0, 32.0, 33.0, 34.0, 35.0, 36.0, 37.0, 38.0, 39.0, 40.0, 41.0, 42.0, 43.0, 44.0, 45.0,
    46.0, 47.0, 48.0, 49.0, 50.0, 51.0, 52.0, 53.0, 54.0, 55.0, 56.0, 57.0, 58.0, 59.0, 60.0, 61.0,
    62.0, 63.0, 64.0, 128.0, 256.0, 512.0, 1024.0,
];

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + (-(a - b).abs()).exp().ln_1p()
}

/// `ln(e^a - e^b)` for `a >= b`.
fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if b >= a {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp_m1()).ln()
}

fn log_erfc(x: f64) -> f64 {
    if x < 25.0 {
        libm::erfc(x).ln()
    } else {
        // Asymptotic expansion; erfc underflows past ~27.
        let x2 = x * x;
        let series = 1.0 - 0.5 / x2 + 0.75 / (x2 * x2) - 1.875 / (x2 * x2 * x2);
        -x2 - x.ln() - 0.5 * std::f64::consts::PI.ln() + series.ln()
    }
}

/// `ln Phi(x)` for the standard normal CDF.
fn log_norm_cdf(x: f64) -> f64 {
    0.5f64.ln() + log_erfc(-x / std::f64::consts::SQRT_2)
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn log_binom_int(n: u64, k: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

fn log_a_int(q: f64, sigma: f64, alpha: u64) -> f64 {
    let mut log_a = f64::NEG_INFINITY;
    for k in 0..=alpha {
        let kf = k as f64;
        let term = log_binom_int(alpha, k)
            + kf * q.ln()
            + (alpha - k) as f64 * (-q).ln_1p()
            + (kf * kf - kf) / (2.0 * sigma * sigma);
        log_a = log_add(log_a, term);
    }
    log_a
}

fn log_a_frac(q: f64, sigma: f64, alpha: f64) -> f64 {
    let mut log_a0 = f64::NEG_INFINITY;
    let mut log_a1 = f64::NEG_INFINITY;
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let mut coef = 1.0f64;
    for i in 0..10_000u32 {
        let fi = i as f64;
        if i > 0 {
            coef *= (alpha - (fi - 1.0)) / fi;
        }
        if coef == 0.0 {
            break;
        }
        let log_coef = coef.abs().ln();
        let j = alpha - fi;
        let log_t0 = log_coef + fi * q.ln() + j * (-q).ln_1p();
        let log_t1 = log_coef + j * q.ln() + fi * (-q).ln_1p();
        let log_e0 = 0.5f64.ln() + log_erfc((fi - z0) / (std::f64::consts::SQRT_2 * sigma));
        let log_e1 = 0.5f64.ln() + log_erfc((z0 - j) / (std::f64::consts::SQRT_2 * sigma));
        let log_s0 = log_t0 + (fi * fi - fi) / (2.0 * sigma * sigma) + log_e0;
        let log_s1 = log_t1 + (j * j - j) / (2.0 * sigma * sigma) + log_e1;
        if coef > 0.0 {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0);
            log_a1 = log_sub(log_a1, log_s1);
        }
        if log_s0.max(log_s1) < -30.0 {
            break;
        }
    }
    log_add(log_a0, log_a1)
}

/// Rényi divergence at order `alpha` of one step of the Poisson-subsampled
/// Gaussian mechanism with sampling rate `q` and noise multiplier `sigma`.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    if q >= 1.0 {
        return alpha / (2.0 * sigma * sigma);
    }
    let log_a = if alpha.fract() == 0.0 {
        log_a_int(q, sigma, alpha as u64)
    } else {
        log_a_frac(q, sigma, alpha)
    };
    (log_a / (alpha - 1.0)).max(0.0)
}

/// Smallest epsilon over `orders` given accumulated Rényi divergences.
pub fn rdp_to_epsilon(orders: &[f64], rdp: &[f64], delta: f64) -> f64 {
    orders
        .iter()
        .zip(rdp)
        .filter(|(&a, _)| a > 1.0)
        .map(|(&a, &r)| r + ((a - 1.0) / a).ln() - (delta.ln() + a.ln()) / (a - 1.0))
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

/// Exact delta of a `mu`-Gaussian DP mechanism at `epsilon`, in log space for
/// the second term so large epsilons stay finite.
fn gaussian_delta(epsilon: f64, mu: f64) -> f64 {
    let a = norm_cdf(-epsilon / mu + mu / 2.0);
    let b = (epsilon + log_norm_cdf(-epsilon / mu - mu / 2.0)).exp();
    (a - b).max(0.0)
}

fn full_batch_epsilon(sigma: f64, steps: usize, delta: f64) -> f64 {
    let mu = (steps as f64).sqrt() / sigma;
    if gaussian_delta(0.0, mu) <= delta {
        return 0.0;
    }
    let mut hi = 1.0;
    while gaussian_delta(hi, mu) > delta {
        hi *= 2.0;
        if hi > 1e6 {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gaussian_delta(mid, mu) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Epsilon spent by `steps` rounds of DP-SGD at noise multiplier `sigma` and
/// sampling rate `q`, at the given `delta`. Zero noise yields `+inf`.
pub fn account_privacy(sigma: f64, q: f64, steps: usize, delta: f64) -> Result<f64> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::invalid(format!("noise multiplier must be nonnegative, got {sigma}")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("sampling rate must lie in (0, 1], got {q}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if steps == 0 {
        return Ok(0.0);
    }
    if sigma == 0.0 {
        return Ok(f64::INFINITY);
    }
    if sigma.is_infinite() {
        return Ok(0.0);
    }
    let rdp: Vec<f64> = RDP_ORDERS
        .iter()
        .map(|&a| steps as f64 * rdp_subsampled_gaussian(q, sigma, a))
        .collect();
    let from_rdp = rdp_to_epsilon(RDP_ORDERS, &rdp, delta);
    Ok(from_rdp.min(full_batch_epsilon(sigma, steps, delta)))
}

/// Smallest noise multiplier (to about 1e-6 relative) whose accounted epsilon
/// stays within `epsilon` for `steps` rounds at sampling rate `q`.
pub fn calibrate_noise(epsilon: f64, q: f64, steps: usize, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("target epsilon must be positive, got {epsilon}")));
    }
    if account_privacy(1.0, q, steps, delta)? <= epsilon {
        let mut hi = 1.0;
        let mut lo = hi / 2.0;
        while account_privacy(lo, q, steps, delta)? <= epsilon {
            hi = lo;
            lo /= 2.0;
            if lo < 1e-3 {
                return Ok(hi);
            }
        }
        return bisect_sigma(lo, hi, epsilon, q, steps, delta);
    }
    let mut lo = 1.0;
    let mut hi = 2.0;
    while account_privacy(hi, q, steps, delta)? > epsilon {
        lo = hi;
        hi *= 2.0;
        if hi > 1e7 {
            return Err(Error::invalid(format!(
                "epsilon {epsilon} is not reachable at delta {delta} with any noise multiplier up to 1e7"
            )));
        }
    }
    bisect_sigma(lo, hi, epsilon, q, steps, delta)
}

/// Bisection with `account(lo) > epsilon >= account(hi)`.
fn bisect_sigma(mut lo: f64, mut hi: f64, epsilon: f64, q: f64, steps: usize, delta: f64) -> Result<f64> {
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if account_privacy(mid, q, steps, delta)? <= epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Coverage penalty `3 sqrt(2 eta + 2 epsilon + delta)` subtracted from the
/// `1 - 2 alpha` jackknife+ guarantee for the private lazy interval.
pub fn coverage_slack(eta: f64, epsilon: f64, delta: f64) -> f64 {
    3.0 * (2.0 * eta + 2.0 * epsilon + delta).sqrt()
}
