//! Projected Gaussian process layer.
//!
//! At each site a bivariate Gaussian vector `X = (X₁, X₂)` is projected onto the
//! unit circle, `θ = atan2(X₂, X₁)`. Augmenting with the radius `R = ‖X‖` gives
//! the tractable joint density `f(r, θ) = φ(r u(θ); m, Σ) · Π r` with
//! `u(θ) = (cos θ, sin θ)`.
//!
//! Angles are radians in `[0, 2π)`, counterclockwise from the first axis.

use std::f64::consts::{PI, TAU};

use nalgebra::{DVector, Matrix2, Vector2};
use libm::erfc;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mvn_logpdf, mvn_sample, SpdMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularObservation {
    pub theta: f64,
    pub radius: f64,
}

/// Wraps any finite angle into `[0, 2π)`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

pub fn angle_from_xy(x1: f64, x2: f64) -> Result<f64> {
    if x1 == 0.0 && x2 == 0.0 {
        return Err(Error::domain("angle of the zero vector is undefined"));
    }
    if !x1.is_finite() || !x2.is_finite() {
        return Err(Error::domain("angle of a non-finite vector is undefined"));
    }
    Ok(wrap_angle(x2.atan2(x1)))
}

/// Joint log density of radii and angles at `k` sites.
///
/// `mean` and `cov` follow the component-major layout: cosine components of
/// all sites first, then sine components.
pub fn joint_logdensity(obs: &[AngularObservation], mean: &DVector<f64>, cov: &SpdMatrix) -> Result<f64> {
    let k = obs.len();
    if mean.len() != 2 * k || cov.dim() != 2 * k {
        return Err(Error::Dimension(format!(
            "{k} sites need a mean of length {} and matching covariance, got {} and {}",
            2 * k,
            mean.len(),
            cov.dim()
        )));
    }
    let mut x = DVector::zeros(2 * k);
    let mut log_jac = 0.0;
    for (j, o) in obs.iter().enumerate() {
        if !(o.radius > 0.0 && o.radius.is_finite()) {
            return Err(Error::domain(format!("radius must be positive, got {}", o.radius)));
        }
        x[j] = o.radius * o.theta.cos();
        x[k + j] = o.radius * o.theta.sin();
        log_jac += o.radius.ln();
    }
    Ok(mvn_logpdf(&x, mean, cov)? + log_jac)
}

/// `ln(1 + d Φ(d) / φ(d))`, stable over the whole real line.
fn log_radial_factor(d: f64) -> f64 {
    if d >= 0.0 {
        let big_phi = 0.5 * erfc(-d / std::f64::consts::SQRT_2);
        0.5 * d * d + (d * big_phi * (2.0 * PI).sqrt() + (-0.5 * d * d).exp()).ln()
    } else if d > -1.5 {
        let x = -d;
        let mills = 0.5 * erfc(x / std::f64::consts::SQRT_2) * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
        (1.0 - x * mills).ln()
    } else {
        // 1 - x R(x) = K / (x + K) with K = 1 / (x + 2/(x + 3/(x + ...)))
        let x = -d;
        let mut v = x;
        for n in (2..=300).rev() {
            v = x + n as f64 / v;
        }
        let kf = 1.0 / v;
        (kf / (x + kf)).ln()
    }
}

/// Log marginal density of the angle at a single site, with the radius
/// integrated out over `(0, ∞)`.
///
/// With `A = uᵀΣ⁻¹u`, `B = uᵀΣ⁻¹m`, `C = mᵀΣ⁻¹m` and `D = B / √A`:
/// `f(θ) = exp(-C/2) / (2π |Σ|^½ A) · [1 + D Φ(D) / φ(D)]`.
pub fn marginal_angle_logpdf(theta: f64, mean: &Vector2<f64>, cov: &Matrix2<f64>) -> f64 {
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    let inv = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
    let u = Vector2::new(theta.cos(), theta.sin());
    let a = u.dot(&(inv * u));
    let b = u.dot(&(inv * mean));
    let c = mean.dot(&(inv * mean));
    let d = b / a.sqrt();
    -0.5 * c - LN_2PI - 0.5 * det.ln() - a.ln() + log_radial_factor(d)
}

/// Draws `X ~ N(mean, cov)` and projects each site's pair onto the circle.
/// Mean resultant length `E[cos θ]` of the projected normal with mean
/// `(γ, 0)` and identity covariance, by the periodic trapezoid rule.
pub fn isotropic_resultant(gamma: f64) -> f64 {
    let m = Vector2::new(gamma, 0.0);
    let nodes = 256 + 64 * gamma.ceil() as usize;
    let h = TAU / nodes as f64;
    (0..nodes)
        .map(|i| {
            let t = i as f64 * h;
            t.cos() * marginal_angle_logpdf(t, &m, &Matrix2::identity()).exp() * h
        })
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Inverse of [`isotropic_resultant`] on `[0, max]`.
pub fn isotropic_norm(rbar: f64, max: f64) -> f64 {
    if rbar <= 0.0 {
        return 0.0;
    }
    if isotropic_resultant(max) <= rbar {
        return max;
    }
    let (mut lo, mut hi) = (0.0, max);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if isotropic_resultant(mid) < rbar {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn sample_pgp<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &SpdMatrix,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if mean.len() % 2 != 0 {
        return Err(Error::Dimension(format!("mean length {} is odd", mean.len())));
    }
    let k = mean.len() / 2;
    let x = mvn_sample(mean, cov, rng)?;
    let mut angles = Vec::with_capacity(k);
    let mut radii = Vec::with_capacity(k);
    for j in 0..k {
        let (a, b) = (x[j], x[k + j]);
        radii.push(a.hypot(b));
        angles.push(angle_from_xy(a, b)?);
    }
    Ok((angles, radii))
}
