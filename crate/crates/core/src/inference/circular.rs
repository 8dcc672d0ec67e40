use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgp::wrap_angle;

/// Number of grid points of the wrapped kernel density estimate.
pub const KDE_GRID: usize = 720;
const MODE_FRACTION: f64 = 0.1;

/// Main mode, circular standard deviation and number of modes of a sample of
/// angles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircularSummary {
    pub mode: f64,
    /// `sqrt(-2 ln R̄)`; infinite when `R̄ = 0`.
    pub dispersion: f64,
    pub n_modes: usize,
    /// All modes, highest density first.
    pub modes: Vec<f64>,
    pub mean_resultant_length: f64,
}

pub fn mean_resultant_length(angles: &[f64]) -> f64 {
    let (s, c) = angles.iter().fold((0.0, 0.0), |(s, c), t| (s + t.sin(), c + t.cos()));
    let r = s.hypot(c) / angles.len() as f64;
    // rounding in the trigonometric sums leaves r a few ulps below 1
    if r > 1.0 - 1e-14 {
        1.0
    } else {
        r
    }
}

/// Wrapped-Gaussian kernel density on the grid, from linearly binned angles.
fn wrapped_kde(angles: &[f64], bandwidth: f64) -> Vec<f64> {
    let g = KDE_GRID;
    let step = TAU / g as f64;
    let mut counts = vec![0.0; g];
    for &t in angles {
        let pos = wrap_angle(t) / step;
        let lo = pos.floor();
        let w = pos - lo;
        let lo = lo as usize % g;
        counts[lo] += 1.0 - w;
        counts[(lo + 1) % g] += w;
    }
    // kernel weight as a function of grid offset, summed over wraps
    let wraps = (3.0 * bandwidth / TAU).ceil() as i64 + 1;
    let kernel: Vec<f64> = (0..g)
        .map(|d| {
            (-wraps..=wraps)
                .map(|w| {
                    let x = d as f64 * step + w as f64 * TAU;
                    (-0.5 * (x / bandwidth).powi(2)).exp()
                })
                .sum()
        })
        .collect();
    let active: Vec<(usize, f64)> = counts.iter().copied().enumerate().filter(|&(_, c)| c > 0.0).collect();
    (0..g)
        .map(|i| active.iter().map(|&(j, c)| c * kernel[(i + g - j) % g]).sum())
        .collect()
}

/// Vertex of the parabola through three neighbouring grid values.
fn refine(density: &[f64], i: usize) -> f64 {
    let g = density.len();
    let (a, b, c) = (density[(i + g - 1) % g], density[i], density[(i + 1) % g]);
    let denom = a - 2.0 * b + c;
    let offset = if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    wrap_angle((i as f64 + offset) * TAU / g as f64)
}

/// Summary of a nonempty sample of angles in radians.
///
/// Modes are local maxima of a wrapped-Gaussian kernel density estimate on a
/// 720-point grid that exceed 10% of the global maximum. The bandwidth is the
/// normal-reference rule with the circular standard deviation plugged in,
/// floored at one grid step.
pub fn circular_summary(angles: &[f64]) -> Result<CircularSummary> {
    if angles.is_empty() {
        return Err(Error::validation("circular summary of an empty sample"));
    }
    if angles.iter().any(|t| !t.is_finite()) {
        return Err(Error::validation("non-finite angle"));
    }
    let rbar = mean_resultant_length(angles);
    let dispersion = if rbar <= 1e-12 { f64::INFINITY } else { (-2.0 * rbar.ln()).max(0.0).sqrt() };
    let step = TAU / KDE_GRID as f64;
    let spread = if dispersion.is_finite() { dispersion.min(TAU) } else { TAU };
    let bandwidth = (spread * (4.0 / (3.0 * angles.len() as f64)).powf(0.2)).max(step);
    let density = wrapped_kde(angles, bandwidth);
    let g = density.len();
    let top = density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut peaks: Vec<(f64, f64)> = (0..g)
        .filter(|&i| {
            let d = density[i];
            d > density[(i + g - 1) % g] && d >= density[(i + 1) % g] && d >= MODE_FRACTION * top
        })
        .map(|i| (density[i], refine(&density, i)))
        .collect();
    if peaks.is_empty() {
        // flat density
        peaks.push((top, 0.0));
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
    let modes: Vec<f64> = peaks.iter().map(|p| p.1).collect();
    Ok(CircularSummary { mode: modes[0], dispersion, n_modes: modes.len(), modes, mean_resultant_length: rbar })
}
