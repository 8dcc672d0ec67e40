use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use super::spd::SpdMatrix;
use crate::error::{Error, Result};

/// Powered exponential covariance `sill * exp(-(h / range)^shape)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovParams {
    pub sill: f64,
    pub range: f64,
    pub shape: f64,
}

impl CovParams {
    pub fn new(sill: f64, range: f64, shape: f64) -> Result<Self> {
        let p = Self { sill, range, shape };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sill > 0.0 && self.sill.is_finite()) {
            return Err(Error::domain(format!("sill must be positive, got {}", self.sill)));
        }
        check_range_shape(self.range, self.shape)
    }
}

fn check_range_shape(range: f64, shape: f64) -> Result<()> {
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::domain(format!("range must be positive, got {range}")));
    }
    if !(shape > 0.0 && shape <= 2.0) {
        return Err(Error::domain(format!("shape must lie in (0, 2], got {shape}")));
    }
    Ok(())
}

/// Parameters of the separable bivariate covariance `T ⊗ ρ(h)` used for the
/// angular layer.
///
/// `T = [[tau, rho √tau], [rho √tau, 1]]`; the variance of the second (sine)
/// component is pinned to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularCovParams {
    pub range: f64,
    pub shape: f64,
    pub tau: f64,
    pub rho: f64,
}

impl AngularCovParams {
    pub fn new(range: f64, shape: f64, tau: f64, rho: f64) -> Result<Self> {
        let p = Self { range, shape, tau, rho };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_range_shape(self.range, self.shape)?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::domain(format!("tau_theta must be positive, got {}", self.tau)));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::domain(format!("rho_theta must lie in (-1, 1), got {}", self.rho)));
        }
        Ok(())
    }

    pub fn block(&self) -> Matrix2<f64> {
        component_block(self.tau, self.rho)
    }
}

/// The 2×2 component covariance `T`.
pub fn component_block(tau: f64, rho: f64) -> Matrix2<f64> {
    let c = rho * tau.sqrt();
    Matrix2::new(tau, c, c, 1.0)
}

/// Unit-sill powered exponential correlation. No parameter checks.
#[inline]
pub fn correlation(h: f64, range: f64, shape: f64) -> f64 {
    if h == 0.0 {
        1.0
    } else if shape == 1.0 {
        (-h / range).exp()
    } else {
        (-(h / range).powf(shape)).exp()
    }
}

pub fn powered_exponential(h: f64, p: &CovParams) -> Result<f64> {
    p.validate()?;
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::domain(format!("distance must be finite and nonnegative, got {h}")));
    }
    Ok(p.sill * correlation(h, p.range, p.shape))
}

/// Planar Euclidean distances between all pairs of coordinates.
pub fn distance_matrix(sites: &[[f64; 2]]) -> DMatrix<f64> {
    let k = sites.len();
    DMatrix::from_fn(k, k, |i, j| {
        let dx = sites[i][0] - sites[j][0];
        let dy = sites[i][1] - sites[j][1];
        dx.hypot(dy)
    })
}

/// Correlation matrix from a precomputed distance matrix.
pub fn build_correlation(dist: &DMatrix<f64>, range: f64, shape: f64) -> DMatrix<f64> {
    dist.map(|h| correlation(h, range, shape))
}

pub fn build_gev_cov(sites: &[[f64; 2]], p: &CovParams) -> Result<SpdMatrix> {
    p.validate()?;
    if sites.is_empty() {
        return Err(Error::Dimension("no sites".into()));
    }
    let corr = build_correlation(&distance_matrix(sites), p.range, p.shape);
    SpdMatrix::new(corr * p.sill)
}

/// The `2k × 2k` matrix `T ⊗ C`, component-major: rows `0..k` hold the cosine
/// components of all sites, rows `k..2k` the sine components.
pub fn build_angular_cov(sites: &[[f64; 2]], p: &AngularCovParams) -> Result<SpdMatrix> {
    p.validate()?;
    if sites.is_empty() {
        return Err(Error::Dimension("no sites".into()));
    }
    let corr = build_correlation(&distance_matrix(sites), p.range, p.shape);
    SpdMatrix::new(kron2(&p.block(), &corr))
}

pub(crate) fn kron2(t: &Matrix2<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let k = c.nrows();
    DMatrix::from_fn(2 * k, 2 * k, |r, s| t[(r / k, s / k)] * c[(r % k, s % k)])
}
