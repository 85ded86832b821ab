//! Chi-squared quantiles for confidence ellipsoids.

use crate::error::{Error, Result};

/// Regularized lower incomplete gamma function `P(a, x)`.
fn lower_gamma_regularized(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * libm::log(x) - x - libm::lgamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut denom = a;
        for _ in 0..1000 {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum * libm::exp(log_prefix)).min(1.0)
    } else {
        // Lentz continued fraction for Q(a, x).
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (1.0 - libm::exp(log_prefix) * h).max(0.0)
    }
}

/// Chi-squared CDF with `dof` degrees of freedom.
pub fn chi_squared_cdf(x: f64, dof: usize) -> f64 {
    lower_gamma_regularized(0.5 * dof as f64, 0.5 * x)
}

/// Inverse of [`chi_squared_cdf`] for `p ∈ (0, 1)`.
pub fn chi_squared_quantile(p: f64, dof: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) || dof == 0 {
        return Err(Error::InvalidArgument(alloc::format!(
            "chi-squared quantile needs 0 < p < 1 and dof ≥ 1, got p = {p}, dof = {dof}"
        )));
    }
    let mut hi = dof as f64 + 10.0;
    while chi_squared_cdf(hi, dof) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi_squared_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
