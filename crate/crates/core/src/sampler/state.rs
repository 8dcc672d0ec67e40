use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::extremes::GevParams;
use crate::model::{Dataset, Layer, ModelSpec, Priors};
use crate::pgp::{isotropic_norm, wrap_angle};

const MAX_INIT_NORM: f64 = 100.0;

/// Latent field values and hyperparameters of one GEV layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GevLayerState {
    /// Field value at each site.
    pub values: DVector<f64>,
    pub beta: DVector<f64>,
    pub sill: f64,
    pub range: f64,
    pub kappa: f64,
}

/// Hyperparameters of the angular layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularParams {
    /// Stacked coefficients: cosine formula first, then sine formula.
    pub beta: DVector<f64>,
    pub tau: f64,
    pub rho: f64,
    pub range: f64,
    pub kappa: f64,
}

/// Angular hyperparameters plus the latent radii of every observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularState {
    pub params: AngularParams,
    /// `n × k` latent radii.
    pub radii: DMatrix<f64>,
    /// `n × k` angles: observed values, or the current imputation where missing.
    pub angles: DMatrix<f64>,
}

impl AngularState {
    /// Bivariate vector of replicate `i` in component-major layout.
    pub fn x_row(&self, i: usize) -> DVector<f64> {
        let k = self.radii.ncols();
        let mut x = DVector::zeros(2 * k);
        for j in 0..k {
            let (r, t) = (self.radii[(i, j)], self.angles[(i, j)]);
            x[j] = r * t.cos();
            x[k + j] = r * t.sin();
        }
        x
    }
}

/// One state of the Markov chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub mu: GevLayerState,
    pub sigma: GevLayerState,
    pub xi: GevLayerState,
    pub angular: Option<AngularState>,
}

/// The retained part of a state: everything except the latent radii.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub mu: GevLayerState,
    pub sigma: GevLayerState,
    pub xi: GevLayerState,
    pub angular: Option<AngularParams>,
}

macro_rules! layer_accessors {
    ($t:ty) => {
        impl $t {
            pub fn layer(&self, layer: Layer) -> &GevLayerState {
                match layer {
                    Layer::Mu => &self.mu,
                    Layer::Sigma => &self.sigma,
                    Layer::Xi => &self.xi,
                }
            }

            pub fn layer_mut(&mut self, layer: Layer) -> &mut GevLayerState {
                match layer {
                    Layer::Mu => &mut self.mu,
                    Layer::Sigma => &mut self.sigma,
                    Layer::Xi => &mut self.xi,
                }
            }

            /// GEV parameters at site `j`.
            #[inline]
            pub fn gev(&self, j: usize) -> GevParams {
                GevParams { mu: self.mu.values[j], sigma: self.sigma.values[j], xi: self.xi.values[j] }
            }

            pub fn gev_all(&self) -> Vec<GevParams> {
                (0..self.mu.values.len()).map(|j| self.gev(j)).collect()
            }

            pub fn k(&self) -> usize {
                self.mu.values.len()
            }
        }
    };
}

layer_accessors!(ChainState);
layer_accessors!(Draw);

impl ChainState {
    pub fn draw(&self) -> Draw {
        Draw {
            mu: self.mu.clone(),
            sigma: self.sigma.clone(),
            xi: self.xi.clone(),
            angular: self.angular.as_ref().map(|a| a.params.clone()),
        }
    }

    /// Checks the domain constraints and that every observed maximum lies in
    /// the GEV support of its site.
    pub fn check_invariants(&self, data: &Dataset) -> Result<()> {
        let k = data.k();
        for layer in Layer::ALL {
            let l = self.layer(layer);
            if l.values.len() != k {
                return Err(Error::Dimension(format!("{} field has {} sites, data {k}", layer.name(), l.values.len())));
            }
            if !(l.sill > 0.0 && l.range > 0.0 && l.kappa > 0.0 && l.kappa <= 2.0) {
                return Err(Error::domain(format!("{} covariance parameters out of domain", layer.name())));
            }
            if l.values.iter().chain(l.beta.iter()).any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("{} layer has non-finite entries", layer.name())));
            }
        }
        for j in 0..k {
            let g = self.gev(j);
            if !(g.sigma > 0.0) {
                return Err(Error::domain(format!("sigma at site {j} is {}", g.sigma)));
            }
            for i in 0..data.n() {
                if let Some(z) = data.maximum(i, j) {
                    if !g.in_support(z) {
                        return Err(Error::domain(format!("observation ({i}, {j}) outside GEV support")));
                    }
                }
            }
        }
        if let Some(a) = &self.angular {
            let p = &a.params;
            if !(p.tau > 0.0 && p.rho.abs() < 1.0 && p.range > 0.0 && p.kappa > 0.0 && p.kappa <= 2.0) {
                return Err(Error::domain("angular covariance parameters out of domain"));
            }
            if a.radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                return Err(Error::domain("nonpositive latent radius"));
            }
            if a.radii.shape() != (data.n(), k) || a.angles.shape() != (data.n(), k) {
                return Err(Error::Dimension("latent radii do not match the data".into()));
            }
        }
        Ok(())
    }

    /// Starting state built from the data alone.
    ///
    /// Site parameters come from probability-weighted moments with the shape
    /// clamped to `[-0.5, 0.5]` (then shrunk until every observation is in
    /// support), coefficients from least squares on those fields, sills and
    /// ranges from their prior medians. Radii at site `j` start at
    /// `sqrt(γ_j² + 1)`, where `γ_j` is the mean norm of an isotropic
    /// projected normal with the site's mean resultant length.
    pub fn initialize(data: &Dataset, spec: &ModelSpec, priors: &Priors) -> Result<Self> {
        let k = data.k();
        let mut fits: Vec<Option<GevParams>> = (0..k).map(|j| pwm_fit(&data.site_maxima(j))).collect();
        let fitted: Vec<GevParams> = fits.iter().flatten().copied().collect();
        if fitted.is_empty() {
            return Err(Error::validation("no site has enough maxima to initialize the GEV layer"));
        }
        let avg = |f: fn(&GevParams) -> f64| fitted.iter().map(f).sum::<f64>() / fitted.len() as f64;
        let pooled = GevParams { mu: avg(|g| g.mu), sigma: avg(|g| g.sigma), xi: avg(|g| g.xi) };
        for (j, fit) in fits.iter_mut().enumerate() {
            let mut g = fit.unwrap_or(pooled);
            let obs = data.site_maxima(j);
            if fit.is_none() {
                g.xi = 0.0;
                if let Some(min) = obs.iter().copied().reduce(f64::min) {
                    g.mu = g.mu.min(min);
                }
            }
            *fit = Some(shrink_to_support(g, &obs));
        }
        let gev: Vec<GevParams> = fits.into_iter().map(|g| g.expect("filled")).collect();

        let layer_state = |layer: Layer| -> GevLayerState {
            let values = DVector::from_iterator(
                k,
                gev.iter().map(|g| match layer {
                    Layer::Mu => g.mu,
                    Layer::Sigma => g.sigma,
                    Layer::Xi => g.xi,
                }),
            );
            let terms = &spec.layer(layer).terms;
            let design = DMatrix::from_fn(k, terms.len(), |j, t| terms[t].evaluate(&data.sites[j], &gev[j]));
            let lp = priors.layer(layer);
            GevLayerState {
                beta: least_squares(&design, &values),
                values,
                sill: lp.sill.median(),
                range: lp.range.median(),
                kappa: spec.layer(layer).kappa,
            }
        };
        let mu = layer_state(Layer::Mu);
        let sigma = layer_state(Layer::Sigma);
        let xi = layer_state(Layer::Xi);

        let angular = match (&spec.angular, &priors.angular) {
            (Some(a), Some(ap)) => {
                let n = data.n();
                let mut angles = DMatrix::zeros(n, k);
                let mut radii = DMatrix::zeros(n, k);
                let mut xbar = DVector::zeros(2 * k);
                for j in 0..k {
                    let obs: Vec<f64> = (0..n).filter_map(|i| data.angle(i, j)).collect();
                    let (s, c) = obs.iter().fold((0.0, 0.0), |(s, c), t| (s + t.sin(), c + t.cos()));
                    let rbar = if obs.is_empty() { 0.0 } else { s.hypot(c) / obs.len() as f64 };
                    let gamma = isotropic_norm(rbar, MAX_INIT_NORM);
                    let radius = gamma.hypot(1.0);
                    let centre = if rbar > 0.0 { wrap_angle(s.atan2(c)) } else { 0.0 };
                    for i in 0..n {
                        let t = data.angle(i, j).unwrap_or(centre);
                        angles[(i, j)] = t;
                        radii[(i, j)] = radius;
                        xbar[j] += radius * t.cos() / n as f64;
                        xbar[k + j] += radius * t.sin() / n as f64;
                    }
                }
                let design = a.design(&data.sites, &gev);
                Some(AngularState {
                    params: AngularParams {
                        beta: least_squares(&design, &xbar),
                        tau: ap.tau.median(),
                        rho: 0.0,
                        range: ap.range.median(),
                        kappa: a.kappa,
                    },
                    radii,
                    angles,
                })
            }
            (None, _) => None,
            (Some(_), None) => return Err(Error::validation("angular formulas given without angular priors")),
        };
        let state = ChainState { mu, sigma, xi, angular };
        state.check_invariants(data)?;
        Ok(state)
    }
}

/// Least squares through an SVD, which tolerates rank-deficient designs.
pub(crate) fn least_squares(design: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let svd = design.clone().svd(true, true);
    svd.solve(y, 1e-12).unwrap_or_else(|_| DVector::zeros(design.ncols()))
}

/// Probability-weighted-moment GEV fit; `None` with fewer than three maxima
/// or degenerate spread.
pub fn pwm_fit(sample: &[f64]) -> Option<GevParams> {
    let n = sample.len();
    if n < 3 {
        return None;
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut b = [0.0; 3];
    for (i, &v) in x.iter().enumerate() {
        let fi = i as f64;
        b[0] += v;
        b[1] += v * fi / (nf - 1.0);
        b[2] += v * fi * (fi - 1.0) / ((nf - 1.0) * (nf - 2.0));
    }
    b.iter_mut().for_each(|v| *v /= nf);
    let l1 = b[0];
    let l2 = 2.0 * b[1] - b[0];
    let l3 = 6.0 * b[2] - 6.0 * b[1] + b[0];
    if !(l2 > 0.0) {
        return None;
    }
    let t3 = l3 / l2;
    let c = 2.0 / (3.0 + t3) - std::f64::consts::LN_2 / 3f64.ln();
    let kh = 7.8590 * c + 2.9554 * c * c;
    let (mu, sigma, xi) = if kh.abs() < 1e-6 {
        let sigma = l2 / std::f64::consts::LN_2;
        (l1 - 0.577_215_664_901_532_9 * sigma, sigma, 0.0)
    } else {
        let g = gamma(1.0 + kh);
        let sigma = l2 * kh / ((1.0 - 2f64.powf(-kh)) * g);
        (l1 - sigma * (1.0 - g) / kh, sigma, -kh)
    };
    if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite() && xi.is_finite()) {
        return None;
    }
    Some(GevParams { mu, sigma, xi: xi.clamp(-0.5, 0.5) })
}

fn shrink_to_support(mut g: GevParams, obs: &[f64]) -> GevParams {
    for _ in 0..60 {
        if obs.iter().all(|&z| g.in_support(z)) {
            return g;
        }
        g.xi *= 0.5;
    }
    g.xi = 0.0;
    g
}
