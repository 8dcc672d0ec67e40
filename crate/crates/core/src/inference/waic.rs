use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extremes::gev_logpdf;
use crate::model::{Dataset, ModelSpec};
use crate::numerics::component_block;
use crate::pgp::marginal_angle_logpdf;
use crate::sampler::Draw;

/// WAIC of one block of pointwise log-likelihoods.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WaicBlock {
    pub lppd: f64,
    pub p_waic: f64,
    pub waic: f64,
    pub n_points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaicReport {
    pub theta: WaicBlock,
    pub eta: WaicBlock,
    pub waic_theta: f64,
    pub waic_eta: f64,
    pub waic_total: f64,
}

/// Contribution of one data point: log of the posterior mean likelihood and
/// the sample variance of the log-likelihood.
fn point_terms(ll: &[f64]) -> (f64, f64) {
    let s = ll.len() as f64;
    let max = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = if max == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        max + ll.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    };
    let mean = ll.iter().sum::<f64>() / s;
    let var = ll.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (s - 1.0);
    (lse - s.ln(), var)
}

/// WAIC of a set of points, each given as its log-likelihood across draws.
pub fn waic_from_pointwise(points: &[Vec<f64>]) -> Result<WaicBlock> {
    let mut block = WaicBlock { n_points: points.len(), ..Default::default() };
    for ll in points {
        if ll.len() < 2 {
            return Err(Error::validation("WAIC needs at least two posterior draws"));
        }
        let (lppd, var) = point_terms(ll);
        block.lppd += lppd;
        block.p_waic += var;
    }
    block.waic = -2.0 * (block.lppd - block.p_waic);
    Ok(block)
}

/// WAIC of the GEV block (pointwise `gev_logpdf` of each observed maximum)
/// and of the angular block (pointwise site-marginal projected normal density
/// of each observed angle, with the radius integrated out).
pub fn waic(draws: &[Draw], data: &Dataset, spec: &ModelSpec) -> Result<WaicReport> {
    if draws.len() < 2 {
        return Err(Error::validation("WAIC needs at least two posterior draws"));
    }
    let k = data.k();
    let per_site: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = (0..k)
        .into_par_iter()
        .map(|j| {
            let gev: Vec<_> = draws.iter().map(|d| d.gev(j)).collect();
            let ang: Option<Vec<(Vector2<f64>, nalgebra::Matrix2<f64>)>> = spec.angular.as_ref().map(|a| {
                draws
                    .iter()
                    .zip(&gev)
                    .filter_map(|(d, g)| {
                        d.angular.as_ref().map(|p| {
                            let [m1, m2] = a.mean_at(&p.beta, &data.sites[j], g);
                            (Vector2::new(m1, m2), component_block(p.tau, p.rho))
                        })
                    })
                    .collect()
            });
            let mut eta = Vec::new();
            let mut theta = Vec::new();
            for i in 0..data.n() {
                if let Some(z) = data.maximum(i, j) {
                    eta.push(gev.iter().map(|g| gev_logpdf(z, g)).collect());
                }
                if let (Some(t), Some(ang)) = (data.angle(i, j), &ang) {
                    if ang.len() == draws.len() {
                        theta.push(ang.iter().map(|(m, c)| marginal_angle_logpdf(t, m, c)).collect());
                    }
                }
            }
            (eta, theta)
        })
        .collect();
    let mut eta_points = Vec::new();
    let mut theta_points = Vec::new();
    for (e, t) in per_site {
        eta_points.extend(e);
        theta_points.extend(t);
    }
    let eta = waic_from_pointwise(&eta_points)?;
    let theta = waic_from_pointwise(&theta_points)?;
    Ok(WaicReport { theta, eta, waic_theta: theta.waic, waic_eta: eta.waic, waic_total: theta.waic + eta.waic })
}
