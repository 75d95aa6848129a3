//! Expectation of `max(0, X)` for `X ~ N(mu, sigma^2)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `sigma * pdf(mu / sigma) + mu * cdf(mu / sigma)`, and `max(0, mu)` at
/// `sigma = 0`. Returns NaN for negative `sigma`.
pub fn psi(mu: f64, sigma: f64) -> f64 {
    if sigma < 0.0 || sigma.is_nan() {
        return f64::NAN;
    }
    if sigma == 0.0 {
        return mu.max(0.0);
    }
    if mu > 0.0 {
        // E[max(0, X)] = mu + E[max(0, -X)]; keeps the small term accurate
        return mu + psi(-mu, sigma);
    }
    let z = mu / sigma;
    (sigma * (normal_pdf(z) + z * normal_cdf(z))).max(0.0)
}

/// `d psi / d mu = cdf(mu / sigma)`; undefined at `sigma = 0`.
pub fn psi_dmu(mu: f64, sigma: f64) -> Result<f64> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "smoothed derivative needs sigma > 0, got {sigma}"
        )));
    }
    Ok(normal_cdf(mu / sigma))
}
