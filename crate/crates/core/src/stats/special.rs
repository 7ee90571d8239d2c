//! Distribution functions needed by the rank tests and the Hotelling limit.
//! The regularized incomplete gamma and beta functions come from `statrs`.

use statrs::function::beta::checked_beta_reg;
use statrs::function::gamma::checked_gamma_ur;

use crate::error::{Error, Result};

pub const F_QUANTILE_TOL: f64 = 1e-10;
pub const F_QUANTILE_MAX_ITER: usize = 200;

/// Upper tail `P(X > x)` of a chi-square variable with `df` degrees of
/// freedom.
pub fn chi2_survival(x: f64, df: f64) -> Result<f64> {
    if !(df >= 1.0) || !df.is_finite() {
        return Err(Error::Stats(format!("chi-square df must be >= 1, got {df}")));
    }
    if !(x >= 0.0) {
        return Err(Error::Stats(format!("chi-square argument must be >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    checked_gamma_ur(df / 2.0, x / 2.0).map_err(|e| Error::Stats(e.to_string()))
}

/// CDF of the F distribution.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    if !(d1 > 0.0 && d2 > 0.0) {
        return Err(Error::Stats(format!(
            "F degrees of freedom must be positive, got ({d1}, {d2})"
        )));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    let z = d1 * x / (d1 * x + d2);
    checked_beta_reg(d1 / 2.0, d2 / 2.0, z).map_err(|e| Error::Stats(e.to_string()))
}

/// Quantile of the F distribution by bisection on its CDF.
pub fn f_quantile(p: f64, d1: f64, d2: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Stats(format!("quantile level must be in (0, 1), got {p}")));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while f_cdf(hi, d1, d2)? < p {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Stats("F quantile bracket diverged".into()));
        }
    }
    for _ in 0..F_QUANTILE_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if f_cdf(mid, d1, d2)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < F_QUANTILE_TOL * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
