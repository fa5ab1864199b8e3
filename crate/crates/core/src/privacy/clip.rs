use crate::error::{Error, Result};

/// Rescales `g` to L2 norm at most `clip_norm`: `g / max(1, |g|_2 / C)`.
pub fn clip_gradient(g: &[f64], clip_norm: f64) -> Result<Vec<f64>> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, clip_norm)?;
    Ok(out)
}

/// In-place variant; returns the divisor that was applied.
pub(crate) fn clip_in_place(g: &mut [f64], clip_norm: f64) -> Result<f64> {
    if !(clip_norm > 0.0) || clip_norm.is_nan() {
        return Err(Error::invalid(format!("clip norm must be positive, got {clip_norm}")));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let divisor = (norm / clip_norm).max(1.0);
    if divisor > 1.0 {
        g.iter_mut().for_each(|v| *v /= divisor);
        // Rounding can leave the norm a few ulps above C; nudge it under.
        let mut shrink = 1.0 - f64::EPSILON;
        while g.iter().map(|v| v * v).sum::<f64>().sqrt() > clip_norm {
            g.iter_mut().for_each(|v| *v *= shrink);
            shrink *= shrink;
        }
    }
    Ok(divisor)
}
