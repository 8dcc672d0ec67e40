//! Bayesian hierarchical model for spatial block maxima paired with directions.
//!
//! Block maxima at each site follow a GEV law whose location, scale and shape
//! vary over space as latent Gaussian processes. The direction attached to each
//! maximum is modelled by a projected Gaussian process whose mean may depend on
//! the GEV parameters (including return levels), which couples the two layers.
//!
//! Inference uses a data-augmented Metropolis-within-Gibbs sampler over the
//! latent radii, the site-level GEV parameters and all hyperparameters
//! ([`sampler`]). Posterior draws feed kriging-based prediction at new sites,
//! return levels, circular summaries and WAIC ([`inference`]). Synthetic data
//! for the three dependence configurations live in [`simulator`].

pub mod error;
pub mod extremes;
pub mod inference;
pub mod io;
pub mod model;
pub mod numerics;
pub mod pgp;
pub mod sampler;
pub mod simulator;

pub use error::{Error, Result};
pub use extremes::GevParams;
pub use model::{AngularSpec, Dataset, Layer, LayerSpec, ModelSpec, Priors, Site, Term};
pub use sampler::{run_chain, ChainRun, ChainSettings, ChainState, Draw, Trace};
