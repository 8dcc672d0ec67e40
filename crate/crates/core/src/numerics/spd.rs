use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use super::dist::standard_normal;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative jitter levels tried, in order, when a plain factorization fails.
const JITTER_LEVELS: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Symmetric positive definite matrix together with its Cholesky factor.
///
/// Construction symmetrizes the input and, if needed, adds a diagonal jitter of
/// `level * trace / dim` for increasing levels up to `1e-6`.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension(format!(
                "covariance must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let dim = matrix.nrows();
        if dim == 0 {
            return Err(Error::Dimension("empty covariance matrix".into()));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                let (a, b) = (matrix[(i, j)], matrix[(j, i)]);
                let diff = (a - b).abs();
                let diag = (matrix[(i, i)] * matrix[(j, j)]).abs().sqrt();
                let scale = a.abs().max(b.abs()).max(diag).max(f64::MIN_POSITIVE);
                if !a.is_finite() || !b.is_finite() || diff > 1e-10 * scale {
                    return Err(Error::NotSymmetric { i, j, diff });
                }
            }
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("covariance contains non-finite entries"));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        if let Some(chol) = Cholesky::new(sym.clone()) {
            return Ok(Self { matrix: sym, chol, jitter: 0.0 });
        }
        let base = sym.trace() / dim as f64;
        if base > 0.0 {
            for level in JITTER_LEVELS {
                let eps = level * base;
                let mut jittered = sym.clone();
                for i in 0..dim {
                    jittered[(i, i)] += eps;
                }
                if let Some(chol) = Cholesky::new(jittered.clone()) {
                    return Ok(Self { matrix: jittered, chol, jitter: eps });
                }
            }
        }
        Err(Error::Singular { dim })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// The (possibly jittered) matrix that was factorized.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lower-triangular factor `L` with `L Lᵀ = matrix()`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `xᵀ A⁻¹ x`, evaluated as `‖L⁻¹ x‖²`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        let w = self
            .chol
            .l_dirty()
            .solve_lower_triangular(x)
            .expect("cholesky factor has a positive diagonal");
        w.norm_squared()
    }

    /// Treating `self` as a precision matrix `Q = L Lᵀ`, draws `L⁻ᵀ z`, a
    /// centered Gaussian vector with covariance `Q⁻¹`.
    pub fn sample_centered_from_precision<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| standard_normal(rng));
        self.chol
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .expect("cholesky factor has a positive diagonal")
    }

    /// Draws `L z` for a standard normal vector `z`.
    pub fn sample_centered<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| standard_normal(rng));
        self.chol.l() * z
    }
}

fn check_dims(x: &DVector<f64>, mean: &DVector<f64>, cov: &SpdMatrix) -> Result<()> {
    if x.len() != mean.len() || x.len() != cov.dim() {
        return Err(Error::Dimension(format!(
            "x has length {}, mean {}, covariance {}",
            x.len(),
            mean.len(),
            cov.dim()
        )));
    }
    Ok(())
}

/// Log density of `N(mean, cov)` at `x`.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &SpdMatrix) -> Result<f64> {
    check_dims(x, mean, cov)?;
    let centered = x - mean;
    let d = x.len() as f64;
    Ok(-0.5 * (d * LN_2PI + cov.log_det() + cov.quad_form(&centered)))
}

pub fn mvn_sample<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &SpdMatrix,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if mean.len() != cov.dim() {
        return Err(Error::Dimension(format!(
            "mean has length {}, covariance {}",
            mean.len(),
            cov.dim()
        )));
    }
    Ok(mean + cov.sample_centered(rng))
}

/// Gaussian conditional distribution of the unobserved block.
#[derive(Clone, Debug)]
pub struct Conditional {
    /// Indices (into the joint vector) of the unobserved components, ascending.
    pub free_idx: Vec<usize>,
    pub mean: DVector<f64>,
    /// Schur complement; may be singular when the unobserved block is
    /// determined by the observed one.
    pub cov: DMatrix<f64>,
}

/// Conditions `N(mean, cov)` on `x[observed_idx] = observed_vals`.
pub fn mvn_conditional(
    mean: &DVector<f64>,
    cov: &SpdMatrix,
    observed_idx: &[usize],
    observed_vals: &[f64],
) -> Result<Conditional> {
    let dim = cov.dim();
    if mean.len() != dim {
        return Err(Error::Dimension(format!(
            "mean has length {}, covariance {dim}",
            mean.len()
        )));
    }
    if observed_idx.len() != observed_vals.len() {
        return Err(Error::Dimension(format!(
            "{} observed indices but {} values",
            observed_idx.len(),
            observed_vals.len()
        )));
    }
    if observed_idx.is_empty() || observed_idx.len() >= dim {
        return Err(Error::Dimension(
            "observed indices must form a nonempty proper subset".into(),
        ));
    }
    let mut seen = vec![false; dim];
    for &i in observed_idx {
        if i >= dim || seen[i] {
            return Err(Error::Dimension(format!("invalid or repeated observed index {i}")));
        }
        seen[i] = true;
    }
    let free_idx: Vec<usize> = (0..dim).filter(|&i| !seen[i]).collect();
    let full = cov.matrix();
    let obs_cov = DMatrix::from_fn(observed_idx.len(), observed_idx.len(), |a, b| {
        full[(observed_idx[a], observed_idx[b])]
    });
    let cross = DMatrix::from_fn(free_idx.len(), observed_idx.len(), |a, b| {
        full[(free_idx[a], observed_idx[b])]
    });
    let free_cov = DMatrix::from_fn(free_idx.len(), free_idx.len(), |a, b| {
        full[(free_idx[a], free_idx[b])]
    });
    let obs = SpdMatrix::new(obs_cov)?;
    let resid = DVector::from_fn(observed_idx.len(), |a, _| {
        observed_vals[a] - mean[observed_idx[a]]
    });
    let free_mean = DVector::from_fn(free_idx.len(), |a, _| mean[free_idx[a]]);
    let gain = obs.solve_matrix(&cross.transpose());
    let cond_mean = free_mean + gain.transpose() * resid;
    let mut cond_cov = free_cov - &cross * gain;
    cond_cov = (&cond_cov + cond_cov.transpose()) * 0.5;
    Ok(Conditional { free_idx, mean: cond_mean, cov: cond_cov })
}
