//! Run configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use exang::io::ReadOptions;
use exang::simulator::{MseStudy, SimConfig};
use exang::{ChainSettings, ModelSpec, Priors};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

fn default_return_levels() -> Vec<f64> {
    vec![0.95, 0.99]
}

fn default_level() -> f64 {
    0.95
}

/// Settings of `predict`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionOptions {
    /// Probabilities `p` of the reported return levels `q(p)`.
    #[serde(default = "default_return_levels")]
    pub return_levels: Vec<f64>,
    /// Probability of the reported credible intervals.
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PredictionOptions {
    fn default() -> Self {
        Self { return_levels: default_return_levels(), level: default_level(), seed: 0 }
    }
}

/// Default output locations, used when a command gets no `--out`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub data: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub waic: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub study: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    /// Defaults to [`Priors::default_for`] the model.
    #[serde(default)]
    pub priors: Option<Priors>,
    #[serde(default)]
    pub mcmc: ChainSettings,
    #[serde(default)]
    pub input: ReadOptions,
    #[serde(default)]
    pub simulation: Option<SimConfig>,
    #[serde(default)]
    pub prediction: PredictionOptions,
    #[serde(default)]
    pub study: Option<MseStudy>,
    #[serde(default)]
    pub output: OutputPaths,
}

/// Every field of a configuration that affects results.
#[derive(Serialize)]
struct Semantic<'a> {
    model: &'a ModelSpec,
    priors: Priors,
    mcmc: &'a ChainSettings,
    input: &'a ReadOptions,
    simulation: &'a Option<SimConfig>,
    prediction: &'a PredictionOptions,
    study: &'a Option<MseStudy>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn priors(&self) -> Priors {
        self.priors.clone().unwrap_or_else(|| Priors::default_for(&self.model))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.priors().validate(&self.model)?;
        self.mcmc.validate()?;
        if let Some(s) = &self.simulation {
            s.validate()?;
        }
        let p = &self.prediction;
        if let Some(bad) = p.return_levels.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
            return Err(CliError::Config(format!("return level probability {bad} outside (0, 1)")));
        }
        if !(p.level > 0.0 && p.level < 1.0) {
            return Err(CliError::Config(format!("interval level {} outside (0, 1)", p.level)));
        }
        Ok(())
    }

    /// SHA-256 of the semantic fields, with priors resolved to their
    /// defaults; output paths do not contribute.
    pub fn digest(&self) -> String {
        let view = Semantic {
            model: &self.model,
            priors: self.priors(),
            mcmc: &self.mcmc,
            input: &self.input,
            simulation: &self.simulation,
            prediction: &self.prediction,
            study: &self.study,
        };
        let bytes = serde_json::to_vec(&view).expect("configuration serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
