use serde::{Deserialize, Serialize};

/// Empirical quantile with linear interpolation between order statistics.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and equal-tailed credible interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

impl PosteriorSummary {
    /// Summary of `samples` with a central interval of probability `level`.
    pub fn from_samples(samples: &[f64], level: f64) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let a = 0.5 * (1.0 - level);
        Self {
            median: empirical_quantile(&s, 0.5),
            lo: empirical_quantile(&s, a),
            hi: empirical_quantile(&s, 1.0 - a),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Posterior median and 95% equal-tailed interval of every column.
pub fn summarize(names: &[String], rows: &[Vec<f64>]) -> Vec<ParamSummary> {
    names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            let s = PosteriorSummary::from_samples(&col, 0.95);
            ParamSummary { name: name.clone(), median: s.median, lo: s.lo, hi: s.hi }
        })
        .collect()
}
