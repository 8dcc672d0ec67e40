//! Posterior prediction, return levels, circular summaries and WAIC.

mod circular;
mod predict;
mod summary;
mod waic;

pub use circular::{circular_summary, mean_resultant_length, CircularSummary, KDE_GRID};
pub use predict::{predict_site, predict_sites, return_level, PredictionDraws};
pub use summary::{empirical_quantile, summarize, ParamSummary, PosteriorSummary};
pub use waic::{waic, waic_from_pointwise, WaicBlock, WaicReport};
