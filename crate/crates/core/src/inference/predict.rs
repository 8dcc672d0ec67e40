use nalgebra::{DMatrix, DVector, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::summary::PosteriorSummary;
use crate::error::{Error, Result};
use crate::extremes::{gev_quantile, GevParams};
use crate::model::{Dataset, Layer, ModelSpec, Site};
use crate::numerics::{build_correlation, component_block, correlation, distance_matrix, standard_normal, SpdMatrix};
use crate::pgp::angle_from_xy;
use crate::sampler::Draw;

const SIGMA_REDRAWS: usize = 100;

/// Per-iteration predictive draws at one query site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionDraws {
    pub site: Site,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub xi: Vec<f64>,
    pub theta: Vec<f64>,
}

impl PredictionDraws {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn gev(&self, t: usize) -> GevParams {
        GevParams { mu: self.mu[t], sigma: self.sigma[t], xi: self.xi[t] }
    }

    pub fn layer(&self, layer: Layer) -> &[f64] {
        match layer {
            Layer::Mu => &self.mu,
            Layer::Sigma => &self.sigma,
            Layer::Xi => &self.xi,
        }
    }
}

/// Kriging weights and conditional standard deviation of one query site.
struct Krige {
    weights: DVector<f64>,
    sd_unit: f64,
    /// Index of an observed site at the same location.
    coincident: Option<usize>,
}

fn krige(corr: &SpdMatrix, coords: &[[f64; 2]], q: [f64; 2], range: f64, kappa: f64) -> Krige {
    let dists: Vec<f64> = coords.iter().map(|c| (c[0] - q[0]).hypot(c[1] - q[1])).collect();
    if let Some(j) = dists.iter().position(|&d| d == 0.0) {
        return Krige { weights: DVector::zeros(0), sd_unit: 0.0, coincident: Some(j) };
    }
    let c = DVector::from_iterator(dists.len(), dists.iter().map(|&h| correlation(h, range, kappa)));
    let weights = corr.solve(&c);
    let var = (1.0 - c.dot(&weights)).max(0.0);
    Krige { weights, sd_unit: var.sqrt(), coincident: None }
}

fn validate_site(site: &Site, spec: &ModelSpec) -> Result<()> {
    let finite = site.coords.iter().all(|c| c.is_finite()) && site.lon.is_finite() && site.lat.is_finite();
    if !finite {
        return Err(Error::validation(format!("query site `{}` has non-finite coordinates", site.id)));
    }
    let uses_alt = Layer::ALL.iter().any(|&l| spec.layer(l).terms.contains(&crate::model::Term::Alt))
        || spec
            .angular
            .as_ref()
            .is_some_and(|a| a.cos.contains(&crate::model::Term::Alt) || a.sin.contains(&crate::model::Term::Alt));
    if uses_alt && !site.alt.is_finite() {
        return Err(Error::validation(format!("query site `{}` lacks the alt covariate", site.id)));
    }
    Ok(())
}

/// Posterior predictive draws at several query sites.
///
/// For every retained draw: each GEV field at the query sites is drawn from
/// its Gaussian conditional given the `k` latent values (σ redrawn until
/// positive); the angle of a new event is then drawn from the bivariate
/// Gaussian at the site, with mean built from the just-drawn GEV values and
/// covariance `T`, and projected.
pub fn predict_sites<R: Rng + ?Sized>(
    draws: &[Draw],
    data: &Dataset,
    spec: &ModelSpec,
    sites: &[Site],
    rng: &mut R,
) -> Result<Vec<PredictionDraws>> {
    for s in sites {
        validate_site(s, spec)?;
    }
    let coords = data.coords();
    let dist = distance_matrix(&coords);
    let none = GevParams { mu: 0.0, sigma: 1.0, xi: 0.0 };
    let designs = Layer::ALL.map(|l| {
        let terms = &spec.layer(l).terms;
        let obs = DMatrix::from_fn(data.k(), terms.len(), |j, t| terms[t].evaluate(&data.sites[j], &none));
        let query = DMatrix::from_fn(sites.len(), terms.len(), |j, t| terms[t].evaluate(&sites[j], &none));
        (obs, query)
    });
    let mut out: Vec<PredictionDraws> = sites
        .iter()
        .map(|s| PredictionDraws {
            site: s.clone(),
            mu: Vec::with_capacity(draws.len()),
            sigma: Vec::with_capacity(draws.len()),
            xi: Vec::with_capacity(draws.len()),
            theta: Vec::with_capacity(draws.len()),
        })
        .collect();
    let mut values = [vec![0.0; sites.len()], vec![0.0; sites.len()], vec![0.0; sites.len()]];
    for draw in draws {
        for layer in Layer::ALL {
            let l = draw.layer(layer);
            let corr = SpdMatrix::new(build_correlation(&dist, l.range, l.kappa))?;
            let (obs_design, query_design) = &designs[layer.index()];
            let resid = &l.values - obs_design * &l.beta;
            let query_mean = query_design * &l.beta;
            let sd = l.sill.sqrt();
            for (q, site) in sites.iter().enumerate() {
                let kr = krige(&corr, &coords, site.coords, l.range, l.kappa);
                let v = match kr.coincident {
                    Some(j) => l.values[j],
                    None => {
                        let m = query_mean[q] + kr.weights.dot(&resid);
                        let s = sd * kr.sd_unit;
                        let mut v = m + s * standard_normal(rng);
                        if layer == Layer::Sigma {
                            let mut tries = 1;
                            while v <= 0.0 && tries < SIGMA_REDRAWS {
                                v = m + s * standard_normal(rng);
                                tries += 1;
                            }
                            if v <= 0.0 {
                                return Err(Error::domain(format!(
                                    "predicted scale at `{}` stays nonpositive",
                                    site.id
                                )));
                            }
                        }
                        v
                    }
                };
                values[layer.index()][q] = v;
            }
        }
        for (q, site) in sites.iter().enumerate() {
            let gev = GevParams { mu: values[0][q], sigma: values[1][q], xi: values[2][q] };
            out[q].mu.push(gev.mu);
            out[q].sigma.push(gev.sigma);
            out[q].xi.push(gev.xi);
            let theta = match (&spec.angular, &draw.angular) {
                (Some(a), Some(p)) => {
                    let [m1, m2] = a.mean_at(&p.beta, site, &gev);
                    let t = component_block(p.tau, p.rho);
                    let l = t.cholesky().ok_or(Error::Singular { dim: 2 })?.l();
                    let x = Vector2::new(m1, m2) + l * Vector2::new(standard_normal(rng), standard_normal(rng));
                    angle_from_xy(x[0], x[1])?
                }
                _ => f64::NAN,
            };
            out[q].theta.push(theta);
        }
    }
    Ok(out)
}

/// Posterior predictive draws at a single query site.
pub fn predict_site<R: Rng + ?Sized>(
    draws: &[Draw],
    data: &Dataset,
    spec: &ModelSpec,
    site: &Site,
    rng: &mut R,
) -> Result<PredictionDraws> {
    Ok(predict_sites(draws, data, spec, std::slice::from_ref(site), rng)?.remove(0))
}

/// Posterior median and 95% interval of the return level `q(p)`, computed
/// iteration by iteration.
pub fn return_level(draws: &PredictionDraws, p: f64) -> Result<PosteriorSummary> {
    if draws.is_empty() {
        return Err(Error::validation("no predictive draws"));
    }
    let q = (0..draws.len()).map(|t| gev_quantile(p, &draws.gev(t))).collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSummary::from_samples(&q, 0.95))
}
