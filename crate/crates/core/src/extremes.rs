//! Generalized extreme value distribution.
//!
//! `G(z) = exp{-[1 + ξ (z - μ) / σ]^(-1/ξ)}` on `{σ + ξ (z - μ) > 0}`, with the
//! Gumbel limit `exp{-exp(-(z - μ) / σ)}` used whenever `|ξ| < 1e-8`.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this magnitude the shape is treated as zero.
pub const GUMBEL_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !mu.is_finite() || !xi.is_finite() {
            return Err(Error::domain(format!("GEV location and shape must be finite, got ({mu}, {xi})")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("GEV scale must be positive, got {sigma}")));
        }
        Ok(Self { mu, sigma, xi })
    }

    /// Whether `z` lies strictly inside the support.
    #[inline]
    pub fn in_support(&self, z: f64) -> bool {
        if self.xi.abs() < GUMBEL_THRESHOLD {
            z.is_finite()
        } else {
            self.sigma + self.xi * (z - self.mu) > 0.0
        }
    }
}

/// Log density; `-inf` outside the support.
pub fn gev_logpdf(z: f64, p: &GevParams) -> f64 {
    let t = (z - p.mu) / p.sigma;
    if p.xi.abs() < GUMBEL_THRESHOLD {
        return -p.sigma.ln() - t - (-t).exp();
    }
    let xt = p.xi * t;
    if !(xt > -1.0) {
        return f64::NEG_INFINITY;
    }
    let log_s = xt.ln_1p();
    -p.sigma.ln() - (1.0 + 1.0 / p.xi) * log_s - (-log_s / p.xi).exp()
}

pub fn gev_cdf(z: f64, p: &GevParams) -> f64 {
    let t = (z - p.mu) / p.sigma;
    if p.xi.abs() < GUMBEL_THRESHOLD {
        return (-(-t).exp()).exp();
    }
    let xt = p.xi * t;
    if !(xt > -1.0) {
        // below the lower endpoint (ξ > 0) or above the upper one (ξ < 0)
        return if p.xi > 0.0 { 0.0 } else { 1.0 };
    }
    (-(-xt.ln_1p() / p.xi).exp()).exp()
}

pub fn gev_quantile(pr: f64, p: &GevParams) -> Result<f64> {
    if !(pr > 0.0 && pr < 1.0) {
        return Err(Error::domain(format!("probability must lie in (0, 1), got {pr}")));
    }
    Ok(quantile_unchecked(pr, p))
}

#[inline]
pub(crate) fn quantile_unchecked(pr: f64, p: &GevParams) -> f64 {
    let y = -pr.ln();
    if p.xi.abs() < GUMBEL_THRESHOLD {
        p.mu - p.sigma * y.ln()
    } else {
        p.mu + p.sigma / p.xi * (-p.xi * y.ln()).exp_m1()
    }
}

/// Inverse-CDF transform of a uniform variate in `(0, 1)`.
pub fn gev_from_uniform(u: f64, p: &GevParams) -> Result<f64> {
    gev_quantile(u, p)
}

pub fn gev_sample<R: Rng + ?Sized>(p: &GevParams, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    quantile_unchecked(u, p)
}
