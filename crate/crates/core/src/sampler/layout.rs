use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::state::{AngularParams, Draw, GevLayerState};
use crate::error::{Error, Result};
use crate::model::Layer;

/// Column layout of a flattened trace row.
///
/// Per GEV layer `l`: `l[j]` for each site, `beta_l[t]`, `tau_l`, `lambda_l`,
/// `kappa_l`; then, with an angular layer, `beta_theta[t]`, `tau_theta`,
/// `rho_theta`, `lambda_theta`, `kappa_theta`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceLayout {
    pub k: usize,
    pub n_beta: [usize; 3],
    pub n_beta_theta: Option<usize>,
}

impl TraceLayout {
    pub fn of(draw: &Draw) -> Self {
        Self {
            k: draw.k(),
            n_beta: Layer::ALL.map(|l| draw.layer(l).beta.len()),
            n_beta_theta: draw.angular.as_ref().map(|a| a.beta.len()),
        }
    }

    pub fn width(&self) -> usize {
        self.n_beta.iter().map(|p| self.k + p + 3).sum::<usize>() + self.n_beta_theta.map_or(0, |p| p + 4)
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.width());
        for layer in Layer::ALL {
            let l = layer.name();
            out.extend((0..self.k).map(|j| format!("{l}[{j}]")));
            out.extend((0..self.n_beta[layer.index()]).map(|t| format!("beta_{l}[{t}]")));
            out.push(format!("tau_{l}"));
            out.push(format!("lambda_{l}"));
            out.push(format!("kappa_{l}"));
        }
        if let Some(p) = self.n_beta_theta {
            out.extend((0..p).map(|t| format!("beta_theta[{t}]")));
            out.extend(["tau_theta", "rho_theta", "lambda_theta", "kappa_theta"].map(String::from));
        }
        out
    }

    pub fn to_row(&self, draw: &Draw) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.width());
        for layer in Layer::ALL {
            let l = draw.layer(layer);
            row.extend(l.values.iter());
            row.extend(l.beta.iter());
            row.extend([l.sill, l.range, l.kappa]);
        }
        if let Some(a) = &draw.angular {
            row.extend(a.beta.iter());
            row.extend([a.tau, a.rho, a.range, a.kappa]);
        }
        row
    }

    pub fn from_row(&self, row: &[f64]) -> Result<Draw> {
        if row.len() != self.width() {
            return Err(Error::Dimension(format!("trace row has {} values, layout {}", row.len(), self.width())));
        }
        let mut it = row.iter().copied();
        let mut take = |m: usize| DVector::from_iterator(m, it.by_ref().take(m));
        let mut layers = Vec::with_capacity(3);
        for layer in Layer::ALL {
            let values = take(self.k);
            let beta = take(self.n_beta[layer.index()]);
            let h = take(3);
            layers.push(GevLayerState { values, beta, sill: h[0], range: h[1], kappa: h[2] });
        }
        let angular = self.n_beta_theta.map(|p| {
            let beta = take(p);
            let h = take(4);
            AngularParams { beta, tau: h[0], rho: h[1], range: h[2], kappa: h[3] }
        });
        let xi = layers.pop().expect("three layers");
        let sigma = layers.pop().expect("three layers");
        let mu = layers.pop().expect("three layers");
        Ok(Draw { mu, sigma, xi, angular })
    }
}
