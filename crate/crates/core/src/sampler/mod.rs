//! Data-augmented Metropolis-within-Gibbs sampler.

mod chain;
mod gibbs;
mod layout;
mod state;
mod tuning;

pub use chain::{chain_rng, run_chain, run_chain_from, run_single, ChainRun, ChainSettings, Trace};
pub use gibbs::{gp_log_density, Gibbs};
pub use layout::TraceLayout;
pub use state::{pwm_fit, AngularParams, AngularState, ChainState, Draw, GevLayerState};
pub use tuning::{Block, Counter, TuningState, TARGET_ACCEPTANCE};
