//! Dense linear algebra and sampling kernels shared by every layer of the model.

mod cov;
mod dist;
mod spd;

pub(crate) use cov::kron2;

pub use cov::{
    build_angular_cov, build_correlation, component_block, build_gev_cov, correlation, distance_matrix,
    powered_exponential, AngularCovParams, CovParams,
};
pub use dist::{inverse_gamma_sample, lognormal_log_correction, lognormal_step, standard_normal};
pub use spd::{mvn_conditional, mvn_logpdf, mvn_sample, Conditional, SpdMatrix};
