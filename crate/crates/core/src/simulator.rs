//! Synthetic data for the three dependence configurations and the MSE study.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extremes::{gev_sample, GevParams};
use crate::model::{AngularSpec, Dataset, Layer, LayerSpec, ModelSpec, Priors, Site, Term};
use crate::numerics::{build_angular_cov, build_gev_cov, mvn_sample, AngularCovParams, CovParams};
use crate::pgp::angle_from_xy;
use crate::sampler::{
    run_chain, run_chain_from, AngularParams, AngularState, ChainSettings, ChainState, Draw, GevLayerState,
    TraceLayout,
};

/// Dependence configuration between angles and maxima.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Configuration {
    /// Constant angular mean `(0.5, 0)`.
    I,
    /// Angular mean `(0.5, 2 ξ(s))`.
    II,
    /// Angular mean `(10 + 0.5 μ(s), 0)`.
    III,
}

impl Configuration {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Self::I),
            "II" | "2" => Ok(Self::II),
            "III" | "3" => Ok(Self::III),
            other => Err(Error::validation(format!("unknown configuration '{other}'"))),
        }
    }

    /// `(τ_θ, ρ_θ)`.
    pub fn angular_cov(self) -> (f64, f64) {
        match self {
            Self::I | Self::II => (0.4, 0.3),
            Self::III => (1.0, 0.0),
        }
    }

    /// Formulas with which the data are generated; also the correctly
    /// specified fitting model.
    pub fn model_spec(self) -> ModelSpec {
        let angular = match self {
            Self::I => AngularSpec::new(vec![Term::Intercept], vec![Term::Intercept]),
            Self::II => AngularSpec::new(vec![Term::Intercept], vec![Term::Intercept, Term::Xi]),
            Self::III => AngularSpec::new(vec![Term::Intercept, Term::Mu], vec![Term::Intercept]),
        };
        ModelSpec { angular: Some(angular), ..gev_only_spec() }
    }

    /// True stacked angular coefficients for [`Configuration::model_spec`].
    pub fn angular_beta(self) -> DVector<f64> {
        match self {
            Self::I => DVector::from_vec(vec![0.5, 0.0]),
            Self::II => DVector::from_vec(vec![0.5, 0.0, 2.0]),
            Self::III => DVector::from_vec(vec![10.0, 0.5, 0.0]),
        }
    }
}

/// GEV formulas of every configuration without an angular layer.
pub fn gev_only_spec() -> ModelSpec {
    ModelSpec {
        mu: LayerSpec::new(vec![Term::Intercept, Term::Lon, Term::Lat]),
        sigma: LayerSpec::new(vec![Term::Intercept, Term::Lat]),
        xi: LayerSpec::new(vec![Term::Intercept]),
        angular: None,
    }
}

/// Configuration I angular formulas on top of the GEV formulas: constant
/// angular mean, no dependence on the GEV fields.
pub fn independence_spec() -> ModelSpec {
    ModelSpec { angular: Some(AngularSpec::new(vec![Term::Intercept], vec![Term::Intercept])), ..gev_only_spec() }
}

const TRUE_BETA: [&[f64]; 3] = [&[2.0, -3.0, -2.0], &[2.0, 1.0], &[0.05]];
const TRUE_SILL: [f64; 3] = [0.1, 0.5, 0.05];
const TRUE_RANGE: [f64; 3] = [1.0, 2.0, 3.0];
const TRUE_ANGULAR_RANGE: f64 = 1.0;
const SIGMA_FLOOR: f64 = 0.05;
const SIGMA_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub config: Configuration,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    /// Extra sites drawn jointly with the `k` observed ones and kept out of
    /// the dataset.
    #[serde(default)]
    pub holdout: usize,
}

impl SimConfig {
    pub fn new(config: Configuration, k: usize, n: usize, seed: u64) -> Self {
        Self { config, k, n, seed, holdout: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.n < 1 {
            return Err(Error::validation(format!("need k >= 2 and n >= 1, got k={} n={}", self.k, self.n)));
        }
        Ok(())
    }
}

/// Generating parameters of a simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub config: Configuration,
    pub spec: ModelSpec,
    /// Latent fields and hyperparameters at the observed sites.
    pub draw: Draw,
    /// `n × k` radii behind the simulated angles.
    pub radii: DMatrix<f64>,
    pub holdout_sites: Vec<Site>,
    pub holdout_gev: Vec<GevParams>,
}

impl Truth {
    /// Chain state equal to the generating parameters.
    pub fn chain_state(&self, data: &Dataset) -> ChainState {
        let angular = self.draw.angular.as_ref().map(|p| AngularState {
            params: p.clone(),
            radii: self.radii.clone(),
            angles: DMatrix::from_fn(data.n(), data.k(), |i, j| data.angle(i, j).unwrap_or(0.0)),
        });
        ChainState {
            mu: self.draw.mu.clone(),
            sigma: self.draw.sigma.clone(),
            xi: self.draw.xi.clone(),
            angular,
        }
    }
}

fn uniform_sites<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<Site> {
    (0..count)
        .map(|j| {
            let lon: f64 = rng.random();
            let lat: f64 = rng.random();
            Site::new(format!("S{j:03}"), lon, lat, 0.0)
        })
        .collect()
}

fn design(terms: &[Term], sites: &[Site]) -> DMatrix<f64> {
    let none = GevParams { mu: 0.0, sigma: 1.0, xi: 0.0 };
    DMatrix::from_fn(sites.len(), terms.len(), |j, t| terms[t].evaluate(&sites[j], &none))
}

/// Draws `n` replicates of (maximum, angle) at `sites` given the parameters
/// in `draw`; also returns the radii.
pub fn sample_data<R: Rng + ?Sized>(
    sites: &[Site],
    spec: &ModelSpec,
    draw: &Draw,
    n: usize,
    rng: &mut R,
) -> Result<(Dataset, DMatrix<f64>)> {
    let k = sites.len();
    let gev = draw.gev_all();
    let mut maxima = vec![vec![None; k]; n];
    let mut angles = vec![vec![None; k]; n];
    let mut radii = DMatrix::zeros(n, k);
    let ang = match (&spec.angular, &draw.angular) {
        (Some(a), Some(p)) => {
            let cov = build_angular_cov(
                &sites.iter().map(|s| s.coords).collect::<Vec<_>>(),
                &AngularCovParams::new(p.range, p.kappa, p.tau, p.rho)?,
            )?;
            let mean = a.design(sites, &gev) * &p.beta;
            Some((mean, cov))
        }
        _ => None,
    };
    for i in 0..n {
        for j in 0..k {
            maxima[i][j] = Some(gev_sample(&gev[j], rng));
        }
        if let Some((mean, cov)) = &ang {
            let x = mvn_sample(mean, cov, rng)?;
            for j in 0..k {
                let (x1, x2) = (x[j], x[k + j]);
                radii[(i, j)] = x1.hypot(x2);
                angles[i][j] = Some(angle_from_xy(x1, x2)?);
            }
        }
    }
    Ok((Dataset::new(sites.to_vec(), maxima, angles)?, radii))
}

/// Simulates one dataset: uniform sites on the unit square, latent GEV fields
/// drawn once from their Gaussian processes (σ redrawn until above 0.05),
/// then `n` replicates per site.
pub fn simulate_dataset(cfg: &SimConfig) -> Result<(Dataset, Truth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.k + cfg.holdout;
    let all_sites = uniform_sites(total, &mut rng);
    let coords: Vec<[f64; 2]> = all_sites.iter().map(|s| s.coords).collect();
    let spec = cfg.config.model_spec();

    let mut layers = Vec::with_capacity(3);
    for layer in Layer::ALL {
        let l = layer.index();
        let beta = DVector::from_column_slice(TRUE_BETA[l]);
        let mean = design(&spec.layer(layer).terms, &all_sites) * &beta;
        let cov = build_gev_cov(&coords, &CovParams::new(TRUE_SILL[l], TRUE_RANGE[l], 1.0)?)?;
        let mut values = mvn_sample(&mean, &cov, &mut rng)?;
        if layer == Layer::Sigma {
            let mut attempts = 1;
            while values.iter().any(|&s| s <= SIGMA_FLOOR) {
                if attempts == SIGMA_ATTEMPTS {
                    return Err(Error::validation("could not draw a positive scale field"));
                }
                values = mvn_sample(&mean, &cov, &mut rng)?;
                attempts += 1;
            }
        }
        layers.push(GevLayerState { values, beta, sill: TRUE_SILL[l], range: TRUE_RANGE[l], kappa: 1.0 });
    }
    let (tau, rho) = cfg.config.angular_cov();
    let angular = AngularParams { beta: cfg.config.angular_beta(), tau, rho, range: TRUE_ANGULAR_RANGE, kappa: 1.0 };
    let full = Draw {
        xi: layers.pop().expect("three layers"),
        sigma: layers.pop().expect("three layers"),
        mu: layers.pop().expect("three layers"),
        angular: Some(angular),
    };

    let (observed, held) = all_sites.split_at(cfg.k);
    let restrict = |l: &GevLayerState, range: std::ops::Range<usize>| GevLayerState {
        values: DVector::from_iterator(range.len(), range.map(|j| l.values[j])),
        ..l.clone()
    };
    let draw = Draw {
        mu: restrict(&full.mu, 0..cfg.k),
        sigma: restrict(&full.sigma, 0..cfg.k),
        xi: restrict(&full.xi, 0..cfg.k),
        angular: full.angular.clone(),
    };
    let holdout_gev = (cfg.k..total).map(|j| full.gev(j)).collect();
    let (data, radii) = sample_data(observed, &spec, &draw, cfg.n, &mut rng)?;
    let truth = Truth { config: cfg.config, spec, draw, radii, holdout_sites: held.to_vec(), holdout_gev };
    Ok((data, truth))
}

/// Draws a state from the prior, restricted to scale fields that are
/// positive everywhere (whole-tuple rejection). Radii and angles are left at
/// placeholders sized `n × k`.
pub fn sample_prior_state<R: Rng + ?Sized>(
    sites: &[Site],
    n: usize,
    spec: &ModelSpec,
    priors: &Priors,
    rng: &mut R,
) -> Result<ChainState> {
    let coords: Vec<[f64; 2]> = sites.iter().map(|s| s.coords).collect();
    let draw_layer = |layer: Layer, rng: &mut R| -> Result<GevLayerState> {
        let p = priors.layer(layer);
        let beta = mvn_sample(&p.beta.mean_vector(), &p.beta.covariance()?, rng)?;
        let sill = p.sill.sample(rng);
        let range = p.range.sample(rng);
        let kappa = spec.layer(layer).kappa;
        let mean = design(&spec.layer(layer).terms, sites) * &beta;
        let values = mvn_sample(&mean, &build_gev_cov(&coords, &CovParams::new(sill, range, kappa)?)?, rng)?;
        Ok(GevLayerState { values, beta, sill, range, kappa })
    };
    let mu = draw_layer(Layer::Mu, rng)?;
    let sigma = loop {
        let s = draw_layer(Layer::Sigma, rng)?;
        if s.values.iter().all(|&v| v > 0.0) {
            break s;
        }
    };
    let xi = draw_layer(Layer::Xi, rng)?;
    let angular = match (&spec.angular, &priors.angular) {
        (Some(a), Some(p)) => Some(AngularState {
            params: AngularParams {
                beta: mvn_sample(&p.beta.mean_vector(), &p.beta.covariance()?, rng)?,
                tau: p.tau.sample(rng),
                rho: rng.random_range(-1.0..1.0),
                range: p.range.sample(rng),
                kappa: a.kappa,
            },
            radii: DMatrix::from_element(n, sites.len(), 1.0),
            angles: DMatrix::zeros(n, sites.len()),
        }),
        _ => None,
    };
    Ok(ChainState { mu, sigma, xi, angular })
}

/// Parameters of the MSE study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseStudy {
    pub config: Configuration,
    pub grid: Vec<(usize, usize)>,
    pub replications: usize,
    pub settings: ChainSettings,
    pub seed: u64,
    /// Start chains at the generating parameters instead of the data-based
    /// initialization.
    #[serde(default)]
    pub init_from_truth: bool,
}

/// Averaged squared errors of posterior medians for one `(k, n)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseCell {
    pub k: usize,
    pub n: usize,
    pub replications: usize,
    /// Keyed by trace column name, plus `tau_mu/(1+lambda_mu)`.
    pub mse: BTreeMap<String, f64>,
}

pub const RATIO_KEY: &str = "tau_mu/(1+lambda_mu)";

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn mix_seed(seed: u64, k: usize, n: usize, rep: usize) -> u64 {
    let mut z = seed ^ ((k as u64) << 40) ^ ((n as u64) << 20) ^ rep as u64;
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Squared errors of the posterior medians of the non-field parameters for
/// one simulated replication.
fn replication_errors(study: &MseStudy, k: usize, n: usize, rep: usize) -> Result<BTreeMap<String, f64>> {
    let seed = mix_seed(study.seed, k, n, rep);
    let (data, truth) = simulate_dataset(&SimConfig::new(study.config, k, n, seed))?;
    let priors = Priors::default_for(&truth.spec);
    let settings = ChainSettings { seed, n_chains: 1, ..study.settings.clone() };
    let run = if study.init_from_truth {
        run_chain_from(&data, &truth.spec, &priors, &settings, &truth.chain_state(&data))?
    } else {
        run_chain(&data, &truth.spec, &priors, &settings)?
    };
    let draws = run.pooled();
    let layout = TraceLayout::of(&truth.draw);
    let names = layout.names();
    let true_row = layout.to_row(&truth.draw);
    let rows: Vec<Vec<f64>> = draws.iter().map(|d| layout.to_row(d)).collect();
    let mut out = BTreeMap::new();
    for (c, name) in names.iter().enumerate() {
        if name.contains("[") && !name.starts_with("beta_") {
            continue;
        }
        let mut col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        let est = median(&mut col);
        out.insert(name.clone(), (est - true_row[c]).powi(2));
    }
    let ratio = |d: &Draw| d.mu.sill / (1.0 + d.mu.range);
    let mut col: Vec<f64> = draws.iter().map(ratio).collect();
    out.insert(RATIO_KEY.to_string(), (median(&mut col) - ratio(&truth.draw)).powi(2));
    Ok(out)
}

/// Runs the MSE study: every `(k, n)` cell and replication is simulated and
/// fitted independently, in parallel.
pub fn mse_study(study: &MseStudy) -> Result<Vec<MseCell>> {
    if study.replications == 0 {
        return Err(Error::validation("replications must be at least 1"));
    }
    let jobs: Vec<(usize, usize, usize)> = study
        .grid
        .iter()
        .flat_map(|&(k, n)| (0..study.replications).map(move |r| (k, n, r)))
        .collect();
    let errors = jobs
        .par_iter()
        .map(|&(k, n, r)| replication_errors(study, k, n, r))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::with_capacity(study.grid.len());
    for (c, &(k, n)) in study.grid.iter().enumerate() {
        let reps = &errors[c * study.replications..(c + 1) * study.replications];
        let mut mse = BTreeMap::new();
        for key in reps[0].keys() {
            let mean = reps.iter().map(|e| e[key]).sum::<f64>() / reps.len() as f64;
            mse.insert(key.clone(), mean);
        }
        cells.push(MseCell { k, n, replications: study.replications, mse });
    }
    Ok(cells)
}
