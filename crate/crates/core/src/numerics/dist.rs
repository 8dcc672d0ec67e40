use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Inverse-gamma draw with density proportional to `x^(-shape-1) exp(-rate / x)`.
pub fn inverse_gamma_sample<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::domain(format!(
            "inverse gamma needs positive shape and rate, got ({shape}, {rate})"
        )));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::domain(e.to_string()))?;
    Ok(1.0 / g.sample(rng))
}

/// Log Hastings correction of a log-normal random walk moving `current -> proposal`.
#[inline]
pub fn lognormal_log_correction(current: f64, proposal: f64) -> f64 {
    (proposal / current).ln()
}

/// Multiplicative log-normal random-walk proposal.
///
/// Returns the proposal and the log Hastings correction `ln(proposal / current)`.
pub fn lognormal_step<R: Rng + ?Sized>(
    current: f64,
    step_sd: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if !(current > 0.0 && current.is_finite()) || !(step_sd >= 0.0) {
        return Err(Error::domain(format!(
            "log-normal step needs positive current value and nonnegative sd, got ({current}, {step_sd})"
        )));
    }
    if step_sd == 0.0 {
        return Ok((current, 0.0));
    }
    let log_ratio = step_sd * standard_normal(rng);
    Ok((current * log_ratio.exp(), log_ratio))
}
