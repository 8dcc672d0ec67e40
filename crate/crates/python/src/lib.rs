//! Python bindings: datasets, fitting, prediction and the GEV and projected
//! normal densities.

use std::collections::HashMap;
use std::fs::File;

use exang::extremes::{gev_cdf, gev_logpdf, gev_quantile};
use exang::inference::{self, circular_summary, PosteriorSummary};
use exang::io::{self, DirectionConvention, ReadOptions};
use exang::pgp::marginal_angle_logpdf;
use exang::sampler::TraceLayout;
use exang::simulator::{simulate_dataset, Configuration, SimConfig};
use exang::{ChainRun, ChainSettings, GevParams, Layer, Priors, Site};
use nalgebra::{Matrix2, Vector2};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: exang::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn convention(name: &str) -> PyResult<DirectionConvention> {
    match name {
        "meteorological" => Ok(DirectionConvention::Meteorological),
        "mathematical" => Ok(DirectionConvention::Mathematical),
        other => Err(PyValueError::new_err(format!("unknown direction convention `{other}`"))),
    }
}

fn configuration(name: &str) -> PyResult<Configuration> {
    match name {
        "I" => Ok(Configuration::I),
        "II" => Ok(Configuration::II),
        "III" => Ok(Configuration::III),
        other => Err(PyValueError::new_err(format!("unknown configuration `{other}`"))),
    }
}

fn gev(mu: f64, sigma: f64, xi: f64) -> PyResult<GevParams> {
    GevParams::new(mu, sigma, xi).map_err(err)
}

#[pyfunction]
fn gev_logdensity(z: f64, mu: f64, sigma: f64, xi: f64) -> PyResult<f64> {
    Ok(gev_logpdf(z, &gev(mu, sigma, xi)?))
}

#[pyfunction]
fn gev_distribution(z: f64, mu: f64, sigma: f64, xi: f64) -> PyResult<f64> {
    Ok(gev_cdf(z, &gev(mu, sigma, xi)?))
}

#[pyfunction]
fn gev_return_level(p: f64, mu: f64, sigma: f64, xi: f64) -> PyResult<f64> {
    gev_quantile(p, &gev(mu, sigma, xi)?).map_err(err)
}

/// Log density of the angle of a bivariate normal with this mean and covariance.
#[pyfunction]
fn projected_normal_logdensity(theta: f64, mean: [f64; 2], cov: [[f64; 2]; 2]) -> f64 {
    let m = Vector2::new(mean[0], mean[1]);
    let c = Matrix2::new(cov[0][0], cov[0][1], cov[1][0], cov[1][1]);
    marginal_angle_logpdf(theta, &m, &c)
}

/// `(mode, dispersion, n_modes)` of a sample of angles in radians.
#[pyfunction]
fn circular_mode(angles: Vec<f64>) -> PyResult<(f64, f64, usize)> {
    let c = circular_summary(&angles).map_err(err)?;
    Ok((c.mode, c.dispersion, c.n_modes))
}

/// Model formulas; built from JSON or taken from a simulation configuration.
#[pyclass(name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    spec: exang::ModelSpec,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: exang::ModelSpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        spec.validate().map_err(err)?;
        Ok(Self { spec })
    }

    #[staticmethod]
    fn configuration(name: &str) -> PyResult<Self> {
        Ok(Self { spec: configuration(name)?.model_spec() })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.spec).expect("model serializes")
    }

    fn __repr__(&self) -> String {
        format!("Model({})", self.to_json())
    }
}

#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    data: exang::Dataset,
    years: Vec<i64>,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (path, direction = "meteorological", project = false))]
    fn read_csv(path: &str, direction: &str, project: bool) -> PyResult<Self> {
        let opts = ReadOptions { direction: convention(direction)?, project };
        let s = io::read_stations_file(path, opts).map_err(err)?;
        Ok(Self { data: s.dataset, years: s.years })
    }

    /// Simulated dataset and its generating parameters as JSON.
    #[staticmethod]
    #[pyo3(signature = (configuration_name, k, n, seed, holdout = 0))]
    fn simulate(configuration_name: &str, k: usize, n: usize, seed: u64, holdout: usize) -> PyResult<(Self, String)> {
        let cfg = SimConfig { holdout, ..SimConfig::new(configuration(configuration_name)?, k, n, seed) };
        let (data, truth) = simulate_dataset(&cfg).map_err(err)?;
        let years = (1..=data.n() as i64).collect();
        Ok((Self { data, years }, serde_json::to_string(&truth).expect("truth serializes")))
    }

    #[pyo3(signature = (path, direction = "meteorological"))]
    fn write_csv(&self, path: &str, direction: &str) -> PyResult<()> {
        io::write_stations_file(path, &self.data, Some(&self.years), convention(direction)?).map_err(err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.data.k()
    }

    #[getter]
    fn n(&self) -> usize {
        self.data.n()
    }

    #[getter]
    fn site_ids(&self) -> Vec<String> {
        self.data.sites.iter().map(|s| s.id.clone()).collect()
    }

    /// Maxima at site `j`, `None` where missing.
    fn maxima(&self, j: usize) -> PyResult<Vec<Option<f64>>> {
        self.check(j)?;
        Ok((0..self.data.n()).map(|i| self.data.maximum(i, j)).collect())
    }

    /// Angles in radians at site `j`, `None` where missing.
    fn angles(&self, j: usize) -> PyResult<Vec<Option<f64>>> {
        self.check(j)?;
        Ok((0..self.data.n()).map(|i| self.data.angle(i, j)).collect())
    }
}

impl PyDataset {
    fn check(&self, j: usize) -> PyResult<()> {
        if j >= self.data.k() {
            return Err(PyValueError::new_err(format!("site {j} out of range (k = {})", self.data.k())));
        }
        Ok(())
    }
}

/// Posterior predictive draws at one site.
#[pyclass(name = "Prediction", frozen, get_all)]
struct PyPrediction {
    site_id: String,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    xi: Vec<f64>,
    theta: Vec<f64>,
}

#[pymethods]
impl PyPrediction {
    /// `(median, lo, hi)` of the return level `q(p)`.
    #[pyo3(signature = (p, level = 0.95))]
    fn return_level(&self, p: f64, level: f64) -> PyResult<(f64, f64, f64)> {
        let q = (0..self.mu.len())
            .map(|t| gev_quantile(p, &GevParams { mu: self.mu[t], sigma: self.sigma[t], xi: self.xi[t] }))
            .collect::<exang::Result<Vec<_>>>()
            .map_err(err)?;
        let s = PosteriorSummary::from_samples(&q, level);
        Ok((s.median, s.lo, s.hi))
    }

    /// `(mode, dispersion, n_modes)` of the predicted angle.
    fn angle_summary(&self) -> PyResult<(f64, f64, usize)> {
        circular_mode(self.theta.clone())
    }
}

/// A completed sampler run with the data and model it was fitted to.
#[pyclass(name = "Fit", frozen)]
struct PyFit {
    run: ChainRun,
    data: exang::Dataset,
    spec: exang::ModelSpec,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn names(&self) -> Vec<String> {
        self.layout().map(|l| l.names()).unwrap_or_default()
    }

    /// Flattened draws, one row per retained iteration, chains pooled.
    fn rows(&self) -> Vec<Vec<f64>> {
        let draws = self.run.pooled();
        match self.layout() {
            Some(l) => draws.iter().map(|d| l.to_row(d)).collect(),
            None => Vec::new(),
        }
    }

    /// `(name, median, lo, hi)` per parameter, 95% equal-tailed intervals.
    fn summary(&self) -> Vec<(String, f64, f64, f64)> {
        inference::summarize(&self.names(), &self.rows())
            .into_iter()
            .map(|s| (s.name, s.median, s.lo, s.hi))
            .collect()
    }

    /// Post-burn-in acceptance rate of each block, per chain.
    fn acceptance(&self) -> Vec<HashMap<String, f64>> {
        self.run.traces.iter().map(|t| t.acceptance.iter().cloned().collect()).collect()
    }

    fn waic(&self) -> PyResult<HashMap<String, f64>> {
        let w = inference::waic(&self.run.pooled(), &self.data, &self.spec).map_err(err)?;
        Ok(HashMap::from([
            ("waic_theta".to_string(), w.waic_theta),
            ("waic_eta".to_string(), w.waic_eta),
            ("waic_total".to_string(), w.waic_total),
            ("p_waic_theta".to_string(), w.theta.p_waic),
            ("p_waic_eta".to_string(), w.eta.p_waic),
        ]))
    }

    /// Predictive draws at `(id, lon, lat, alt)` sites, in the planar
    /// coordinates of the data.
    #[pyo3(signature = (sites, seed = 0))]
    fn predict(&self, sites: Vec<(String, f64, f64, f64)>, seed: u64) -> PyResult<Vec<PyPrediction>> {
        let sites: Vec<Site> = sites.into_iter().map(|(id, lon, lat, alt)| Site::new(id, lon, lat, alt)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds = inference::predict_sites(&self.run.pooled(), &self.data, &self.spec, &sites, &mut rng).map_err(err)?;
        Ok(preds
            .into_iter()
            .map(|p| PyPrediction {
                site_id: p.site.id.clone(),
                mu: p.layer(Layer::Mu).to_vec(),
                sigma: p.layer(Layer::Sigma).to_vec(),
                xi: p.layer(Layer::Xi).to_vec(),
                theta: p.theta,
            })
            .collect())
    }

    fn write_trace(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        io::write_trace(f, &self.run).map_err(err)
    }
}

impl PyFit {
    fn layout(&self) -> Option<TraceLayout> {
        self.run.traces.iter().find_map(|t| t.draws.first()).map(TraceLayout::of)
    }
}

/// Runs the sampler. `priors` is JSON; defaults follow the model.
#[pyfunction]
#[pyo3(signature = (data, model, n_iter = 4000, burnin = 2000, thin = 1, seed = 1, n_chains = 1, priors = None))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    data: &PyDataset,
    model: PyModel,
    n_iter: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
    n_chains: usize,
    priors: Option<&str>,
) -> PyResult<PyFit> {
    let priors = match priors {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => Priors::default_for(&model.spec),
    };
    let settings = ChainSettings { n_iter, burnin, thin, seed, n_chains };
    let run = py
        .detach(|| exang::run_chain(&data.data, &model.spec, &priors, &settings))
        .map_err(err)?;
    Ok(PyFit { run, data: data.data.clone(), spec: model.spec })
}

#[pymodule]
pub fn exang_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFit>()?;
    m.add_class::<PyPrediction>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(gev_logdensity, m)?)?;
    m.add_function(wrap_pyfunction!(gev_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(gev_return_level, m)?)?;
    m.add_function(wrap_pyfunction!(projected_normal_logdensity, m)?)?;
    m.add_function(wrap_pyfunction!(circular_mode, m)?)?;
    Ok(())
}
