//! Data, model formulas and prior settings.

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::extremes::{quantile_unchecked, GevParams};
use crate::numerics::{inverse_gamma_sample, SpdMatrix};

/// One of the three latent GEV parameter fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Mu,
    Sigma,
    Xi,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Mu, Layer::Sigma, Layer::Xi];

    pub fn name(self) -> &'static str {
        match self {
            Layer::Mu => "mu",
            Layer::Sigma => "sigma",
            Layer::Xi => "xi",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A regression term of a mean function.
///
/// GEV layers accept only the geographic terms; the angular mean may also use
/// the site's GEV parameters and return levels `q(p)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Lon,
    Lat,
    Alt,
    Mu,
    Sigma,
    Xi,
    #[serde(rename = "q")]
    Quantile(f64),
}

impl Term {
    pub fn is_geographic(&self) -> bool {
        matches!(self, Term::Intercept | Term::Lon | Term::Lat | Term::Alt)
    }

    pub fn depends_on(&self, layer: Layer) -> bool {
        match self {
            Term::Mu => layer == Layer::Mu,
            Term::Sigma => layer == Layer::Sigma,
            Term::Xi => layer == Layer::Xi,
            Term::Quantile(_) => true,
            _ => false,
        }
    }

    #[inline]
    pub fn evaluate(&self, site: &Site, gev: &GevParams) -> f64 {
        match *self {
            Term::Intercept => 1.0,
            Term::Lon => site.lon,
            Term::Lat => site.lat,
            Term::Alt => site.alt,
            Term::Mu => gev.mu,
            Term::Sigma => gev.sigma,
            Term::Xi => gev.xi,
            Term::Quantile(p) => quantile_unchecked(p, gev),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Term::Quantile(p) = *self {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::validation(format!("q({p}): probability must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => write!(f, "intercept"),
            Term::Lon => write!(f, "lon"),
            Term::Lat => write!(f, "lat"),
            Term::Alt => write!(f, "alt"),
            Term::Mu => write!(f, "mu"),
            Term::Sigma => write!(f, "sigma"),
            Term::Xi => write!(f, "xi"),
            Term::Quantile(p) => write!(f, "q({p})"),
        }
    }
}

fn default_kappa() -> f64 {
    1.0
}

/// Mean formula and correlation shape of one GEV layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub terms: Vec<Term>,
    /// Powered exponential shape; held fixed unless `sample_kappa` is set.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub sample_kappa: bool,
}

impl LayerSpec {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms, kappa: 1.0, sample_kappa: false }
    }
}

/// Mean formulas of the two Gaussian components behind the angles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularSpec {
    pub cos: Vec<Term>,
    pub sin: Vec<Term>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub sample_kappa: bool,
}

impl AngularSpec {
    pub fn new(cos: Vec<Term>, sin: Vec<Term>) -> Self {
        Self { cos, sin, kappa: 1.0, sample_kappa: false }
    }

    pub fn n_coef(&self) -> usize {
        self.cos.len() + self.sin.len()
    }

    pub fn depends_on(&self, layer: Layer) -> bool {
        self.cos.iter().chain(&self.sin).any(|t| t.depends_on(layer))
    }

    /// Mean of the two components at one site.
    #[inline]
    pub fn mean_at(&self, beta: &DVector<f64>, site: &Site, gev: &GevParams) -> [f64; 2] {
        let p1 = self.cos.len();
        let m1 = self.cos.iter().enumerate().map(|(t, term)| beta[t] * term.evaluate(site, gev)).sum();
        let m2 = self.sin.iter().enumerate().map(|(t, term)| beta[p1 + t] * term.evaluate(site, gev)).sum();
        [m1, m2]
    }

    /// Block-diagonal design matrix (`2k × (p₁ + p₂)`), component-major rows.
    pub fn design(&self, sites: &[Site], gev: &[GevParams]) -> DMatrix<f64> {
        let k = sites.len();
        let p1 = self.cos.len();
        let mut d = DMatrix::zeros(2 * k, self.n_coef());
        for j in 0..k {
            for (t, term) in self.cos.iter().enumerate() {
                d[(j, t)] = term.evaluate(&sites[j], &gev[j]);
            }
            for (t, term) in self.sin.iter().enumerate() {
                d[(k + j, p1 + t)] = term.evaluate(&sites[j], &gev[j]);
            }
        }
        d
    }

    pub fn coef_names(&self) -> Vec<String> {
        self.cos
            .iter()
            .map(|t| format!("cos:{t}"))
            .chain(self.sin.iter().map(|t| format!("sin:{t}")))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub mu: LayerSpec,
    pub sigma: LayerSpec,
    pub xi: LayerSpec,
    /// `None` fits the GEV layers alone.
    #[serde(default)]
    pub angular: Option<AngularSpec>,
}

impl ModelSpec {
    pub fn layer(&self, layer: Layer) -> &LayerSpec {
        match layer {
            Layer::Mu => &self.mu,
            Layer::Sigma => &self.sigma,
            Layer::Xi => &self.xi,
        }
    }

    pub fn angular_depends_on(&self, layer: Layer) -> bool {
        self.angular.as_ref().is_some_and(|a| a.depends_on(layer))
    }

    pub fn validate(&self) -> Result<()> {
        for layer in Layer::ALL {
            let spec = self.layer(layer);
            if spec.terms.is_empty() {
                return Err(Error::validation(format!("{} formula has no terms", layer.name())));
            }
            for t in &spec.terms {
                if !t.is_geographic() {
                    return Err(Error::validation(format!(
                        "term `{t}` is not allowed in the {} formula",
                        layer.name()
                    )));
                }
            }
            check_kappa(spec.kappa)?;
        }
        if let Some(a) = &self.angular {
            if a.cos.is_empty() || a.sin.is_empty() {
                return Err(Error::validation("angular formulas need at least one term each"));
            }
            for t in a.cos.iter().chain(&a.sin) {
                t.validate()?;
            }
            check_kappa(a.kappa)?;
        }
        Ok(())
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa <= 2.0) {
        return Err(Error::validation(format!("correlation shape must lie in (0, 2], got {kappa}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    /// Planar coordinates used for distances.
    pub coords: [f64; 2],
    pub lon: f64,
    pub lat: f64,
    pub alt: f64,
}

impl Site {
    /// Site whose planar coordinates are its longitude and latitude.
    pub fn new(id: impl Into<String>, lon: f64, lat: f64, alt: f64) -> Self {
        Self { id: id.into(), coords: [lon, lat], lon, lat, alt }
    }
}

/// `n` replicates of (maximum, angle) at `k` sites; `None` marks a missing value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub sites: Vec<Site>,
    n: usize,
    maxima: Vec<Option<f64>>,
    angles: Vec<Option<f64>>,
}

impl Dataset {
    /// `maxima[i][j]` and `angles[i][j]` hold replicate `i` at site `j`.
    pub fn new(sites: Vec<Site>, maxima: Vec<Vec<Option<f64>>>, angles: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let k = sites.len();
        if k == 0 {
            return Err(Error::validation("dataset has no sites"));
        }
        let mut ids = HashSet::new();
        for s in &sites {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::validation(format!("duplicate site id `{}`", s.id)));
            }
            if !(s.coords.iter().all(|c| c.is_finite()) && s.lon.is_finite() && s.lat.is_finite() && s.alt.is_finite()) {
                return Err(Error::validation(format!("site `{}` has non-finite coordinates", s.id)));
            }
        }
        let n = maxima.len();
        if angles.len() != n {
            return Err(Error::validation(format!("{n} replicates of maxima but {} of angles", angles.len())));
        }
        if n == 0 {
            return Err(Error::validation("dataset has no replicates"));
        }
        let mut flat_max = Vec::with_capacity(n * k);
        let mut flat_ang = Vec::with_capacity(n * k);
        for (i, (mrow, arow)) in maxima.into_iter().zip(angles).enumerate() {
            if mrow.len() != k || arow.len() != k {
                return Err(Error::validation(format!("replicate {i} does not have {k} sites")));
            }
            for v in mrow.iter().flatten() {
                if !v.is_finite() {
                    return Err(Error::validation(format!("replicate {i}: non-finite maximum")));
                }
            }
            for a in arow.iter().flatten() {
                if !(0.0..TAU).contains(a) {
                    return Err(Error::validation(format!("replicate {i}: angle {a} outside [0, 2π)")));
                }
            }
            flat_max.extend(mrow);
            flat_ang.extend(arow);
        }
        Ok(Self { sites, n, maxima: flat_max, angles: flat_ang })
    }

    pub fn k(&self) -> usize {
        self.sites.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn maximum(&self, i: usize, j: usize) -> Option<f64> {
        self.maxima[i * self.sites.len() + j]
    }

    #[inline]
    pub fn angle(&self, i: usize, j: usize) -> Option<f64> {
        self.angles[i * self.sites.len() + j]
    }

    pub fn coords(&self) -> Vec<[f64; 2]> {
        self.sites.iter().map(|s| s.coords).collect()
    }

    /// Observed maxima at site `j`.
    pub fn site_maxima(&self, j: usize) -> Vec<f64> {
        (0..self.n).filter_map(|i| self.maximum(i, j)).collect()
    }

    /// Keeps only the listed sites, in the given order.
    pub fn subset_sites(&self, keep: &[usize]) -> Result<Self> {
        let sites = keep.iter().map(|&j| self.sites[j].clone()).collect();
        let maxima = (0..self.n).map(|i| keep.iter().map(|&j| self.maximum(i, j)).collect()).collect();
        let angles = (0..self.n).map(|i| keep.iter().map(|&j| self.angle(i, j)).collect()).collect();
        Self::new(sites, maxima, angles)
    }

    /// Dataset with the same sites and replicates stacked twice.
    pub fn duplicated(&self) -> Self {
        let mut maxima = self.maxima.clone();
        maxima.extend_from_slice(&self.maxima);
        let mut angles = self.angles.clone();
        angles.extend_from_slice(&self.angles);
        Self { sites: self.sites.clone(), n: 2 * self.n, maxima, angles }
    }
}

/// Gaussian prior on a coefficient vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl GaussianPrior {
    pub fn isotropic(dim: usize, mean: f64, variance: f64) -> Self {
        let cov = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { variance } else { 0.0 }).collect())
            .collect();
        Self { mean: vec![mean; dim], cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }

    pub fn covariance(&self) -> Result<SpdMatrix> {
        let d = self.dim();
        if self.cov.len() != d || self.cov.iter().any(|r| r.len() != d) {
            return Err(Error::validation(format!("prior covariance must be {d}x{d}")));
        }
        SpdMatrix::new(DMatrix::from_fn(d, d, |i, j| self.cov[i][j]))
    }
}

/// Inverse-gamma prior with density proportional to `x^(-shape-1) exp(-scale / x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

impl InvGammaPrior {
    pub fn median(&self) -> f64 {
        1.0 / GammaDist::new(self.shape, self.scale).expect("validated").inverse_cdf(0.5)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        inverse_gamma_sample(self.shape, self.scale, rng).expect("validated")
    }
}

/// Gamma prior with density proportional to `x^(shape-1) exp(-x / scale)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub scale: f64,
}

impl GammaPrior {
    #[inline]
    pub fn logpdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        (self.shape - 1.0) * x.ln() - x / self.scale - ln_gamma(self.shape) - self.shape * self.scale.ln()
    }

    pub fn median(&self) -> f64 {
        GammaDist::new(self.shape, 1.0 / self.scale).expect("validated").inverse_cdf(0.5)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.shape, self.scale).expect("validated").sample(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPriors {
    pub beta: GaussianPrior,
    pub sill: InvGammaPrior,
    pub range: GammaPrior,
}

/// Priors of the angular layer; `rho_theta` is uniform on `(-1, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularPriors {
    pub beta: GaussianPrior,
    pub tau: GammaPrior,
    pub range: GammaPrior,
}

/// Prior settings. Correlation shapes, when sampled, are uniform on `(0, 2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub mu: LayerPriors,
    pub sigma: LayerPriors,
    pub xi: LayerPriors,
    #[serde(default)]
    pub angular: Option<AngularPriors>,
}

impl Priors {
    /// Weakly informative defaults sized to `spec`.
    pub fn default_for(spec: &ModelSpec) -> Self {
        let layer = |s: &LayerSpec| LayerPriors {
            beta: GaussianPrior::isotropic(s.terms.len(), 0.0, 100.0),
            sill: InvGammaPrior { shape: 2.0, scale: 0.5 },
            range: GammaPrior { shape: 2.0, scale: 1.0 },
        };
        Self {
            mu: layer(&spec.mu),
            sigma: layer(&spec.sigma),
            xi: LayerPriors {
                sill: InvGammaPrior { shape: 2.0, scale: 0.1 },
                ..layer(&spec.xi)
            },
            angular: spec.angular.as_ref().map(|a| AngularPriors {
                beta: GaussianPrior::isotropic(a.n_coef(), 0.0, 100.0),
                tau: GammaPrior { shape: 2.0, scale: 0.5 },
                range: GammaPrior { shape: 2.0, scale: 1.0 },
            }),
        }
    }

    pub fn layer(&self, layer: Layer) -> &LayerPriors {
        match layer {
            Layer::Mu => &self.mu,
            Layer::Sigma => &self.sigma,
            Layer::Xi => &self.xi,
        }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let positive = |what: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(format!("prior {what} must be positive, got {v}")))
            }
        };
        for layer in Layer::ALL {
            let p = self.layer(layer);
            let n = spec.layer(layer).terms.len();
            if p.beta.dim() != n {
                return Err(Error::validation(format!(
                    "{} coefficient prior has dimension {} but the formula has {n} terms",
                    layer.name(),
                    p.beta.dim()
                )));
            }
            p.beta.covariance()?;
            positive("sill shape", p.sill.shape)?;
            positive("sill scale", p.sill.scale)?;
            positive("range shape", p.range.shape)?;
            positive("range scale", p.range.scale)?;
        }
        if let Some(a) = &spec.angular {
            let p = self
                .angular
                .as_ref()
                .ok_or_else(|| Error::validation("angular formulas given without angular priors"))?;
            if p.beta.dim() != a.n_coef() {
                return Err(Error::validation(format!(
                    "angular coefficient prior has dimension {} but the formulas have {} terms",
                    p.beta.dim(),
                    a.n_coef()
                )));
            }
            p.beta.covariance()?;
            positive("tau_theta shape", p.tau.shape)?;
            positive("tau_theta scale", p.tau.scale)?;
            positive("range shape", p.range.shape)?;
            positive("range scale", p.range.scale)?;
        }
        Ok(())
    }
}
