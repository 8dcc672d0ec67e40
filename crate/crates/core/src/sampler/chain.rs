use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gibbs::Gibbs;
use super::state::{ChainState, Draw};
use super::tuning::TuningState;
use crate::error::{Error, Result};
use crate::model::{Dataset, ModelSpec, Priors};

/// MCMC run lengths and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainSettings {
    pub n_iter: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub n_chains: usize,
}

impl Default for ChainSettings {
    fn default() -> Self {
        Self { n_iter: 4000, burnin: 2000, thin: 1, seed: 1, n_chains: 1 }
    }
}

impl ChainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.n_chains == 0 {
            return Err(Error::validation("thin and n_chains must be at least 1"));
        }
        if self.n_iter > 0 && self.burnin >= self.n_iter {
            return Err(Error::validation(format!("burnin {} must be below n_iter {}", self.burnin, self.n_iter)));
        }
        Ok(())
    }
}

/// Random-number stream of chain `chain` under `seed`.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Retained draws of one chain and its post-burn-in acceptance rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub chain: usize,
    pub draws: Vec<Draw>,
    pub acceptance: Vec<(String, f64)>,
    /// Step sizes at the end of the run.
    pub tuning: TuningState,
}

/// All chains of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRun {
    pub settings: ChainSettings,
    pub traces: Vec<Trace>,
}

impl ChainRun {
    /// Draws of every chain, concatenated in chain order.
    pub fn pooled(&self) -> Vec<Draw> {
        self.traces.iter().flat_map(|t| t.draws.iter().cloned()).collect()
    }
}

/// Runs one chain from `init` with the given RNG stream index.
pub fn run_single(
    gibbs: &Gibbs<'_>,
    init: ChainState,
    settings: &ChainSettings,
    chain: usize,
) -> Result<Trace> {
    let mut rng = chain_rng(settings.seed, chain);
    let mut state = init;
    let mut tuning = TuningState::new(gibbs.data().k());
    tuning.adapting = settings.burnin > 0;
    let mut draws = Vec::with_capacity(settings.n_iter.saturating_sub(settings.burnin) / settings.thin + 1);
    for t in 0..settings.n_iter {
        if t == settings.burnin {
            tuning.adapting = false;
            tuning.reset_counters();
        }
        gibbs.step(&mut state, &mut tuning, &mut rng)?;
        if t >= settings.burnin && (t - settings.burnin) % settings.thin == 0 {
            draws.push(state.draw());
        }
    }
    if settings.n_iter == 0 {
        draws.push(state.draw());
    }
    debug_assert!(state.check_invariants(gibbs.data()).is_ok());
    let acceptance = tuning.acceptance_rates().into_iter().map(|(b, r)| (b.to_string(), r)).collect();
    log::debug!("chain {chain} finished with {} draws", draws.len());
    Ok(Trace { chain, draws, acceptance, tuning })
}

/// Initializes from the data and runs `settings.n_chains` chains in parallel,
/// chain `c` on stream `c` of `settings.seed`.
pub fn run_chain(data: &Dataset, spec: &ModelSpec, priors: &Priors, settings: &ChainSettings) -> Result<ChainRun> {
    let init = ChainState::initialize(data, spec, priors)?;
    run_chain_from(data, spec, priors, settings, &init)
}

/// As [`run_chain`] with an explicit starting state.
pub fn run_chain_from(
    data: &Dataset,
    spec: &ModelSpec,
    priors: &Priors,
    settings: &ChainSettings,
    init: &ChainState,
) -> Result<ChainRun> {
    settings.validate()?;
    init.check_invariants(data)?;
    let gibbs = Gibbs::new(data, spec, priors)?;
    let traces = (0..settings.n_chains)
        .into_par_iter()
        .map(|c| run_single(&gibbs, init.clone(), settings, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChainRun { settings: settings.clone(), traces })
}
