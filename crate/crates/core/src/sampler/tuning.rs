use serde::{Deserialize, Serialize};

use crate::model::Layer;

/// Acceptance rate targeted by the burn-in adaptation of scalar blocks.
pub const TARGET_ACCEPTANCE: f64 = 0.44;

const MIN_STEP: f64 = 1e-8;
const MAX_STEP: f64 = 1e3;

/// Metropolis blocks tracked for acceptance reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Block {
    SiteMu,
    SiteSigma,
    SiteXi,
    Radius,
    TauTheta,
    LambdaTheta,
    RhoTheta,
    KappaTheta,
    LambdaMu,
    LambdaSigma,
    LambdaXi,
    KappaMu,
    KappaSigma,
    KappaXi,
}

impl Block {
    pub const ALL: [Block; 14] = [
        Block::SiteMu,
        Block::SiteSigma,
        Block::SiteXi,
        Block::Radius,
        Block::TauTheta,
        Block::LambdaTheta,
        Block::RhoTheta,
        Block::KappaTheta,
        Block::LambdaMu,
        Block::LambdaSigma,
        Block::LambdaXi,
        Block::KappaMu,
        Block::KappaSigma,
        Block::KappaXi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::SiteMu => "mu",
            Block::SiteSigma => "sigma",
            Block::SiteXi => "xi",
            Block::Radius => "radius",
            Block::TauTheta => "tau_theta",
            Block::LambdaTheta => "lambda_theta",
            Block::RhoTheta => "rho_theta",
            Block::KappaTheta => "kappa_theta",
            Block::LambdaMu => "lambda_mu",
            Block::LambdaSigma => "lambda_sigma",
            Block::LambdaXi => "lambda_xi",
            Block::KappaMu => "kappa_mu",
            Block::KappaSigma => "kappa_sigma",
            Block::KappaXi => "kappa_xi",
        }
    }

    pub fn site(layer: Layer) -> Self {
        [Block::SiteMu, Block::SiteSigma, Block::SiteXi][layer.index()]
    }

    pub fn range(layer: Layer) -> Self {
        [Block::LambdaMu, Block::LambdaSigma, Block::LambdaXi][layer.index()]
    }

    pub fn kappa(layer: Layer) -> Self {
        [Block::KappaMu, Block::KappaSigma, Block::KappaXi][layer.index()]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counter {
    pub accepted: u64,
    pub proposed: u64,
}

impl Counter {
    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}

/// Random-walk scales and acceptance counters.
///
/// Scales adapt by Robbins–Monro steps on their logarithm while `adapting` is
/// set (burn-in) and are frozen afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningState {
    /// Per-site random-walk sd for each GEV layer.
    pub site_steps: [Vec<f64>; 3],
    /// Per-site log-normal sd for the radii.
    pub radius_steps: Vec<f64>,
    pub tau_theta_step: f64,
    pub lambda_theta_step: f64,
    pub kappa_theta_step: f64,
    /// Half-width of the uniform proposal for `rho_theta`.
    pub rho_eps: f64,
    pub range_steps: [f64; 3],
    pub kappa_steps: [f64; 3],
    pub adapting: bool,
    pub iteration: u64,
    counters: Vec<Counter>,
}

impl TuningState {
    pub fn new(k: usize) -> Self {
        Self {
            site_steps: [vec![0.1; k], vec![0.1; k], vec![0.05; k]],
            radius_steps: vec![0.5; k],
            tau_theta_step: 0.2,
            lambda_theta_step: 0.2,
            kappa_theta_step: 0.1,
            rho_eps: 0.1,
            range_steps: [0.3; 3],
            kappa_steps: [0.1; 3],
            adapting: true,
            iteration: 0,
            counters: vec![Counter::default(); Block::ALL.len()],
        }
    }

    /// Every scale set to zero and adaptation off; proposals equal the current state.
    pub fn frozen_zero(k: usize) -> Self {
        Self {
            site_steps: [vec![0.0; k], vec![0.0; k], vec![0.0; k]],
            radius_steps: vec![0.0; k],
            tau_theta_step: 0.0,
            lambda_theta_step: 0.0,
            kappa_theta_step: 0.0,
            rho_eps: 0.0,
            range_steps: [0.0; 3],
            kappa_steps: [0.0; 3],
            adapting: false,
            iteration: 0,
            counters: vec![Counter::default(); Block::ALL.len()],
        }
    }

    pub fn counter(&self, block: Block) -> Counter {
        self.counters[block as usize]
    }

    pub fn reset_counters(&mut self) {
        self.counters.iter_mut().for_each(|c| *c = Counter::default());
    }

    /// Acceptance rates of every block that made at least one proposal.
    pub fn acceptance_rates(&self) -> Vec<(&'static str, f64)> {
        Block::ALL
            .iter()
            .filter_map(|&b| self.counter(b).rate().map(|r| (b.name(), r)))
            .collect()
    }

    /// Records one MH decision and returns the adapted step when adapting.
    #[inline]
    pub(crate) fn record(&mut self, block: Block, accepted: bool, log_alpha: f64, step: f64) -> f64 {
        let c = &mut self.counters[block as usize];
        c.proposed += 1;
        c.accepted += accepted as u64;
        if !self.adapting || step <= 0.0 {
            return step;
        }
        let alpha = if log_alpha >= 0.0 { 1.0 } else { log_alpha.exp() };
        let gain = (self.iteration as f64 + 1.0).powf(-0.6);
        (step.ln() + gain * (alpha - TARGET_ACCEPTANCE)).exp().clamp(MIN_STEP, MAX_STEP)
    }
}
