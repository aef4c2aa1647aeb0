//! Central finite-difference gradient checker.

use crate::error::{Error, Result};

/// Maximum over coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`
/// where `numeric` is the central difference `(f(x+d) - f(x-d)) / 2d`.
pub fn grad_check(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], analytic: &[f64], delta: f64) -> Result<f64> {
    if point.len() != analytic.len() {
        return Err(Error::dim("gradient length", point.len(), analytic.len()));
    }
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + delta;
        let up = f(&x);
        x[i] = orig - delta;
        let down = f(&x);
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("gradient check objective"));
        }
        let numeric = (up - down) / (2.0 * delta);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
