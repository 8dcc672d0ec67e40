use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;

use super::state::{AngularParams, ChainState};
use super::tuning::{Block, TuningState};
use crate::error::{Error, Result};
use crate::extremes::{gev_logpdf, GevParams};
use crate::model::{AngularSpec, Dataset, Layer, ModelSpec, Priors};
use crate::numerics::{
    build_correlation, component_block, distance_matrix, kron2, inverse_gamma_sample, lognormal_step,
    standard_normal, SpdMatrix,
};
use crate::pgp::angle_from_xy;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Metropolis decision on a log acceptance ratio.
#[inline]
fn accept<R: Rng + ?Sized>(log_alpha: f64, rng: &mut R) -> bool {
    if log_alpha >= 0.0 {
        true
    } else if log_alpha.is_nan() || log_alpha == f64::NEG_INFINITY {
        false
    } else {
        rng.random::<f64>().ln() < log_alpha
    }
}

/// Per-layer quantities reused across the single-site moves of Step 1.
struct LayerCache {
    corr_inv: DMatrix<f64>,
    /// `C⁻¹ (v - D β)`.
    resid_prec: DVector<f64>,
}

/// Precision of the stacked angular vector and the sufficient statistics of
/// the `n` replicates.
struct AngularCache {
    prec: DMatrix<f64>,
    mean: DVector<f64>,
    prec_mean: DVector<f64>,
    prec_sum: DVector<f64>,
}

impl AngularCache {
    #[inline]
    fn block(&self, j: usize, k: usize) -> Matrix2<f64> {
        let p = &self.prec;
        Matrix2::new(p[(j, j)], p[(j, k + j)], p[(k + j, j)], p[(k + j, k + j)])
    }

    /// `v += P[:, j] δ₀ + P[:, k+j] δ₁`.
    #[inline]
    fn add_columns(prec: &DMatrix<f64>, v: &mut DVector<f64>, j: usize, k: usize, delta: Vector2<f64>) {
        let c0 = prec.column(j);
        let c1 = prec.column(k + j);
        for r in 0..v.len() {
            v[r] += c0[r] * delta[0] + c1[r] * delta[1];
        }
    }
}

/// Sufficient statistics of the angular likelihood for a fixed correlation
/// matrix: `G[a][b] = Σᵢ eᵢ⁽ᵃ⁾ᵀ C⁻¹ eᵢ⁽ᵇ⁾` and `ln |C|`.
struct AngularStats {
    gram: Matrix2<f64>,
    log_det_corr: f64,
}

/// Data-augmented Metropolis-within-Gibbs sampler.
///
/// One call to [`Gibbs::step`] applies, in order: single-site GEV parameter
/// moves, radius moves, the conjugate angular coefficient draw, conjugate GEV
/// coefficient draws, inverse-gamma sill draws, the angular covariance moves
/// and the range moves.
pub struct Gibbs<'a> {
    data: &'a Dataset,
    spec: &'a ModelSpec,
    priors: &'a Priors,
    dist: DMatrix<f64>,
    designs: [DMatrix<f64>; 3],
    beta_prior: [(DMatrix<f64>, DVector<f64>); 3],
    angular_beta_prior: Option<(DMatrix<f64>, DVector<f64>)>,
    site_maxima: Vec<Vec<f64>>,
}

fn precision_form(prior: &crate::model::GaussianPrior) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let cov = prior.covariance()?;
    let prec = cov.inverse();
    let lin = &prec * prior.mean_vector();
    Ok((prec, lin))
}

impl<'a> Gibbs<'a> {
    pub fn new(data: &'a Dataset, spec: &'a ModelSpec, priors: &'a Priors) -> Result<Self> {
        spec.validate()?;
        priors.validate(spec)?;
        let k = data.k();
        let no_gev = crate::extremes::GevParams { mu: 0.0, sigma: 1.0, xi: 0.0 };
        let designs = Layer::ALL.map(|layer| {
            let terms = &spec.layer(layer).terms;
            DMatrix::from_fn(k, terms.len(), |j, t| terms[t].evaluate(&data.sites[j], &no_gev))
        });
        let beta_prior = [
            precision_form(&priors.mu.beta)?,
            precision_form(&priors.sigma.beta)?,
            precision_form(&priors.xi.beta)?,
        ];
        let angular_beta_prior = match &priors.angular {
            Some(a) if spec.angular.is_some() => Some(precision_form(&a.beta)?),
            _ => None,
        };
        Ok(Self {
            data,
            spec,
            priors,
            dist: distance_matrix(&data.coords()),
            designs,
            beta_prior,
            angular_beta_prior,
            site_maxima: (0..k).map(|j| data.site_maxima(j)).collect(),
        })
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    /// Design matrix of a GEV layer (`k × p`).
    pub fn design(&self, layer: Layer) -> &DMatrix<f64> {
        &self.designs[layer.index()]
    }

    fn angular_spec(&self) -> &AngularSpec {
        self.spec.angular.as_ref().expect("angular layer present")
    }

    fn layer_corr(&self, range: f64, kappa: f64) -> Result<SpdMatrix> {
        SpdMatrix::new(build_correlation(&self.dist, range, kappa))
    }

    fn residual(&self, state: &ChainState, layer: Layer) -> DVector<f64> {
        let l = state.layer(layer);
        &l.values - self.design(layer) * &l.beta
    }

    fn layer_cache(&self, state: &ChainState, layer: Layer) -> Result<LayerCache> {
        let l = state.layer(layer);
        let corr = self.layer_corr(l.range, l.kappa)?;
        let corr_inv = corr.inverse();
        let resid_prec = &corr_inv * self.residual(state, layer);
        Ok(LayerCache { corr_inv, resid_prec })
    }

    /// Stacked angular mean `D_θ β_θ` under the state's current GEV fields.
    pub fn angular_mean(&self, state: &ChainState) -> DVector<f64> {
        let a = self.angular_spec();
        let beta = &state.angular.as_ref().expect("angular state").params.beta;
        let k = self.data.k();
        let mut m = DVector::zeros(2 * k);
        for j in 0..k {
            let [m1, m2] = a.mean_at(beta, &self.data.sites[j], &state.gev(j));
            m[j] = m1;
            m[k + j] = m2;
        }
        m
    }

    fn angular_precision(&self, p: &AngularParams) -> Result<DMatrix<f64>> {
        let corr_inv = self.layer_corr(p.range, p.kappa)?.inverse();
        let t_inv = component_block(p.tau, p.rho)
            .try_inverse()
            .ok_or_else(|| Error::domain("component covariance is singular"))?;
        Ok(kron2(&t_inv, &corr_inv))
    }

    fn angular_cache(&self, state: &ChainState) -> Result<Option<AngularCache>> {
        let Some(ang) = &state.angular else { return Ok(None) };
        let prec = self.angular_precision(&ang.params)?;
        let mean = self.angular_mean(state);
        let mut sum = DVector::zeros(mean.len());
        for i in 0..self.data.n() {
            sum += ang.x_row(i);
        }
        Ok(Some(AngularCache {
            prec_mean: &prec * &mean,
            prec_sum: &prec * sum,
            prec,
            mean,
        }))
    }

    // ---------------------------------------------------------------------
    // Step 1: site-level GEV parameters

    /// Log acceptance ratio of moving `layer` at site `j` to `proposal`.
    ///
    /// Sum of the site's GEV log-likelihood ratio, the augmented angular
    /// log-likelihood ratio over all replicates (zero unless the angular mean
    /// uses this layer) and the GP prior log ratio, the last two via rank-one
    /// updates.
    fn gev_site_log_alpha(
        &self,
        state: &ChainState,
        layer: Layer,
        j: usize,
        proposal: f64,
        lc: &LayerCache,
        ac: Option<&AngularCache>,
    ) -> f64 {
        if !proposal.is_finite() || (layer == Layer::Sigma && proposal <= 0.0) {
            return f64::NEG_INFINITY;
        }
        let old = state.gev(j);
        let mut new = old;
        match layer {
            Layer::Mu => new.mu = proposal,
            Layer::Sigma => new.sigma = proposal,
            Layer::Xi => new.xi = proposal,
        }
        let mut log_alpha = 0.0;
        for &z in &self.site_maxima[j] {
            let lp = gev_logpdf(z, &new);
            if lp == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            log_alpha += lp - gev_logpdf(z, &old);
        }
        if let Some(ac) = ac {
            let k = self.data.k();
            let beta = &state.angular.as_ref().expect("angular state").params.beta;
            let [m1, m2] = self.angular_spec().mean_at(beta, &self.data.sites[j], &new);
            let delta = Vector2::new(m1 - ac.mean[j], m2 - ac.mean[k + j]);
            if !(delta[0].is_finite() && delta[1].is_finite()) {
                return f64::NEG_INFINITY;
            }
            let n = self.data.n() as f64;
            let pm = Vector2::new(ac.prec_mean[j], ac.prec_mean[k + j]);
            let ps = Vector2::new(ac.prec_sum[j], ac.prec_sum[k + j]);
            let quad = delta.dot(&(ac.block(j, k) * delta));
            log_alpha -= 0.5 * (n * (2.0 * delta.dot(&pm) + quad) - 2.0 * delta.dot(&ps));
        }
        let dv = proposal - state.layer(layer).values[j];
        let sill = state.layer(layer).sill;
        log_alpha -= (2.0 * dv * lc.resid_prec[j] + dv * dv * lc.corr_inv[(j, j)]) / (2.0 * sill);
        log_alpha
    }

    fn gev_site_move<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        tuning: &mut TuningState,
        layer: Layer,
        j: usize,
        lc: &mut LayerCache,
        mut ac: Option<&mut AngularCache>,
        rng: &mut R,
    ) -> bool {
        let step = tuning.site_steps[layer.index()][j];
        let current = state.layer(layer).values[j];
        let proposal = if step > 0.0 { current + step * standard_normal(rng) } else { current };
        let log_alpha = self.gev_site_log_alpha(state, layer, j, proposal, lc, ac.as_deref());
        let accepted = accept(log_alpha, rng);
        if accepted && proposal != current {
            let dv = proposal - current;
            lc.resid_prec.axpy(dv, &lc.corr_inv.column(j).into_owned(), 1.0);
            state.layer_mut(layer).values[j] = proposal;
            if let Some(ac) = ac.as_deref_mut() {
                let k = self.data.k();
                let beta = &state.angular.as_ref().expect("angular state").params.beta;
                let [m1, m2] = self.angular_spec().mean_at(beta, &self.data.sites[j], &state.gev(j));
                let delta = Vector2::new(m1 - ac.mean[j], m2 - ac.mean[k + j]);
                ac.mean[j] = m1;
                ac.mean[k + j] = m2;
                AngularCache::add_columns(&ac.prec, &mut ac.prec_mean, j, k, delta);
            }
        }
        tuning.site_steps[layer.index()][j] = tuning.record(Block::site(layer), accepted, log_alpha, step);
        accepted
    }

    /// Step 1 for one layer: a random-walk move at every site in turn.
    pub fn update_gev_layer<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        tuning: &mut TuningState,
        layer: Layer,
        rng: &mut R,
    ) -> Result<()> {
        let mut lc = self.layer_cache(state, layer)?;
        let mut ac = if self.spec.angular_depends_on(layer) { self.angular_cache(state)? } else { None };
        for j in 0..self.data.k() {
            self.gev_site_move(state, tuning, layer, j, &mut lc, ac.as_mut(), rng);
        }
        Ok(())
    }

    /// A single Step 1 move at site `j`; returns whether it was accepted.
    pub fn update_gev_site<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        tuning: &mut TuningState,
        layer: Layer,
        j: usize,
        rng: &mut R,
    ) -> Result<bool> {
        let mut lc = self.layer_cache(state, layer)?;
        let mut ac = if self.spec.angular_depends_on(layer) { self.angular_cache(state)? } else { None };
        Ok(self.gev_site_move(state, tuning, layer, j, &mut lc, ac.as_mut(), rng))
    }

    /// Step 1 log acceptance ratio evaluated with cached rank-one updates.
    pub fn log_accept_gev_site(&self, state: &ChainState, layer: Layer, j: usize, proposal: f64) -> Result<f64> {
        let lc = self.layer_cache(state, layer)?;
        let ac = if self.spec.angular_depends_on(layer) { self.angular_cache(state)? } else { None };
        Ok(self.gev_site_log_alpha(state, layer, j, proposal, &lc, ac.as_ref()))
    }

    // ---------------------------------------------------------------------
    // Step 2: latent radii

    #[allow(clippy::too_many_arguments)]
    fn radius_move<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        tuning: &mut TuningState,
        ac: &AngularCache,
        pe: &mut DVector<f64>,
        i: usize,
        j: usize,
        rng: &mut R,
    ) -> Result<bool> {
        let k = self.data.k();
        let ang = state.angular.as_mut().expect("angular state");
        let pbb = ac.block(j, k);
        if self.data.angle(i, j).is_none() {
            // latent angle: exact Gibbs draw of the site's pair given the rest
            let cov = pbb.try_inverse().ok_or(Error::Singular { dim: 2 })?;
            let r = ang.radii[(i, j)];
            let t = ang.angles[(i, j)];
            let x = Vector2::new(r * t.cos(), r * t.sin());
            let mean = x - cov * Vector2::new(pe[j], pe[k + j]);
            let l = cov.cholesky().ok_or(Error::Singular { dim: 2 })?.l();
            let y = mean + l * Vector2::new(standard_normal(rng), standard_normal(rng));
            ang.radii[(i, j)] = y.norm();
            ang.angles[(i, j)] = angle_from_xy(y[0], y[1])?;
            AngularCache::add_columns(&ac.prec, pe, j, k, y - x);
            return Ok(true);
        }
        let step = tuning.radius_steps[j];
        let r = ang.radii[(i, j)];
        let t = ang.angles[(i, j)];
        let (proposal, log_correction) = lognormal_step(r, step, rng)?;
        let delta = Vector2::new(t.cos(), t.sin()) * (proposal - r);
        let dquad = 2.0 * (delta[0] * pe[j] + delta[1] * pe[k + j]) + delta.dot(&(pbb * delta));
        let log_jacobian = (proposal / r).ln();
        let log_alpha = -0.5 * dquad + log_jacobian + log_correction;
        let accepted = accept(log_alpha, rng);
        if accepted && proposal != r {
            ang.radii[(i, j)] = proposal;
            AngularCache::add_columns(&ac.prec, pe, j, k, delta);
        }
        tuning.radius_steps[j] = tuning.record(Block::Radius, accepted, log_alpha, step);
        Ok(accepted)
    }

    /// Step 2: one log-normal move per (replicate, site) radius; cells with a
    /// missing angle get an exact Gibbs draw of the full bivariate pair.
    pub fn update_radii<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        tuning: &mut TuningState,
        rng: &mut R,
    ) -> Result<()> {
        let Some(ac) = self.angular_cache(state)? else { return Ok(()) };
        for i in 0..self.data.n() {
            let x = state.angular.as_ref().expect("angular state").x_row(i);
            let mut pe = &ac.prec * (x - &ac.mean);
            for j in 0..self.data.k() {
                self.radius_move(state, tuning, &ac, &mut pe, i, j, rng)?;
            }
        }
        Ok(())
    }

    /// A single Step 2 move for replicate `i` at site `j`.
    pub fn update_radius<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        tuning: &mut TuningState,
        i: usize,
        j: usize,
        rng: &mut R,
    ) -> Result<bool> {
        let Some(ac) = self.angular_cache(state)? else { return Ok(false) };
        let x = state.angular.as_ref().expect("angular state").x_row(i);
        let mut pe = &ac.prec * (x - &ac.mean);
        self.radius_move(state, tuning, &ac, &mut pe, i, j, rng)
    }

    // ---------------------------------------------------------------------
    // Steps 3-5: conjugate draws

    /// Gaussian full conditional of the angular coefficients as (mean, precision).
    ///
    /// Precision `Σ*⁻¹ + n Dᵀ Σ_θ⁻¹ D`, linear term `Σ*⁻¹ μ* + Dᵀ Σ_θ⁻¹ Σᵢ Xᵢ`.
    pub fn beta_theta_posterior(&self, state: &ChainState) -> Result<Option<(DVector<f64>, SpdMatrix)>> {
        let (Some(ang), Some((prior_prec, prior_lin))) = (&state.angular, &self.angular_beta_prior) else {
            return Ok(None);
        };
        let design = self.angular_spec().design(&self.data.sites, &state.gev_all());
        let prec = self.angular_precision(&ang.params)?;
        let mut sum = DVector::zeros(design.nrows());
        for i in 0..self.data.n() {
            sum += ang.x_row(i);
        }
        let pd = &prec * &design;
        let post_prec = prior_prec + design.transpose() * &pd * self.data.n() as f64;
        let lin = prior_lin + pd.transpose() * sum;
        let post = SpdMatrix::new(post_prec)?;
        Ok(Some((post.solve(&lin), post)))
    }

    /// Step 3.
    pub fn update_beta_theta<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        if let Some((mean, prec)) = self.beta_theta_posterior(state)? {
            let draw = mean + prec.sample_centered_from_precision(rng);
            state.angular.as_mut().expect("angular state").params.beta = draw;
        }
        Ok(())
    }

    /// Gaussian full conditional of a GEV layer's coefficients as (mean, precision).
    pub fn beta_gev_posterior(&self, state: &ChainState, layer: Layer) -> Result<(DVector<f64>, SpdMatrix)> {
        let l = state.layer(layer);
        let corr = self.layer_corr(l.range, l.kappa)?;
        let design = self.design(layer);
        let cd = corr.solve_matrix(design) / l.sill;
        let (prior_prec, prior_lin) = &self.beta_prior[layer.index()];
        let post_prec = prior_prec + design.transpose() * &cd;
        let lin = prior_lin + cd.transpose() * &l.values;
        let post = SpdMatrix::new(post_prec)?;
        Ok((post.solve(&lin), post))
    }

    /// Step 4.
    pub fn update_beta_gev<R: Rng + ?Sized>(&self, state: &mut ChainState, layer: Layer, rng: &mut R) -> Result<()> {
        let (mean, prec) = self.beta_gev_posterior(state, layer)?;
        state.layer_mut(layer).beta = mean + prec.sample_centered_from_precision(rng);
        Ok(())
    }

    /// Inverse-gamma full conditional of a layer's sill as (shape, rate):
    /// `(κ* + k/2, θ* + rᵀ C⁻¹ r / 2)` with `C` the unit-sill correlation.
    pub fn sill_posterior(&self, state: &ChainState, layer: Layer) -> Result<(f64, f64)> {
        let l = state.layer(layer);
        let corr = self.layer_corr(l.range, l.kappa)?;
        let q = corr.quad_form(&self.residual(state, layer));
        let prior = self.priors.layer(layer).sill;
        Ok((prior.shape + 0.5 * self.data.k() as f64, prior.scale + 0.5 * q))
    }

    /// Step 5.
    pub fn update_sill_gev<R: Rng + ?Sized>(&self, state: &mut ChainState, layer: Layer, rng: &mut R) -> Result<()> {
        let (shape, rate) = self.sill_posterior(state, layer)?;
        state.layer_mut(layer).sill = inverse_gamma_sample(shape, rate, rng)?;
        Ok(())
    }

    // ---------------------------------------------------------------------
    // Step 6: angular covariance

    fn centered_components(&self, state: &ChainState) -> [DMatrix<f64>; 2] {
        let ang = state.angular.as_ref().expect("angular state");
        let m = self.angular_mean(state);
        let (n, k) = (self.data.n(), self.data.k());
        let mut e = [DMatrix::zeros(k, n), DMatrix::zeros(k, n)];
        for i in 0..n {
            for j in 0..k {
                let (r, t) = (ang.radii[(i, j)], ang.angles[(i, j)]);
                e[0][(j, i)] = r * t.cos() - m[j];
                e[1][(j, i)] = r * t.sin() - m[k + j];
            }
        }
        e
    }

    fn angular_stats(&self, e: &[DMatrix<f64>; 2], range: f64, kappa: f64) -> Result<AngularStats> {
        let corr = self.layer_corr(range, kappa)?;
        let l = corr.factor();
        let w0 = l.solve_lower_triangular(&e[0]).ok_or(Error::Singular { dim: corr.dim() })?;
        let w1 = l.solve_lower_triangular(&e[1]).ok_or(Error::Singular { dim: corr.dim() })?;
        let g01 = w0.dot(&w1);
        Ok(AngularStats {
            gram: Matrix2::new(w0.norm_squared(), g01, g01, w1.norm_squared()),
            log_det_corr: corr.log_det(),
        })
    }

    /// Augmented Gaussian log-likelihood of all replicates without the
    /// radius Jacobian, using `ln|T ⊗ C| = k ln|T| + 2 ln|C|` and
    /// `tr((T⁻¹ ⊗ C⁻¹) S) = Σ_ab T⁻¹_ab G_ab`.
    fn separable_loglik(&self, tau: f64, rho: f64, stats: &AngularStats) -> f64 {
        let (n, k) = (self.data.n() as f64, self.data.k() as f64);
        let t = component_block(tau, rho);
        let det_t = t.determinant();
        if !(det_t > 0.0) {
            return f64::NEG_INFINITY;
        }
        let t_inv = t.try_inverse().expect("positive determinant");
        let tr = t_inv.component_mul(&stats.gram).sum();
        -0.5 * n * (2.0 * k * LN_2PI + k * det_t.ln() + 2.0 * stats.log_det_corr) - 0.5 * tr
    }

    /// Log of the augmented joint density of all radii and angles,
    /// `Σᵢ [ln φ(Xᵢ; m, T ⊗ C) + Σⱼ ln Rᵢⱼ]`.
    pub fn augmented_loglik(&self, state: &ChainState) -> Result<f64> {
        let Some(ang) = &state.angular else { return Ok(0.0) };
        let e = self.centered_components(state);
        let stats = self.angular_stats(&e, ang.params.range, ang.params.kappa)?;
        let jac: f64 = ang.radii.iter().map(|r| r.ln()).sum();
        Ok(self.separable_loglik(ang.params.tau, ang.params.rho, &stats) + jac)
    }

    /// Step 6 log acceptance ratio of replacing the angular covariance
    /// parameters by `proposal`: augmented likelihood ratio, prior ratios of
    /// `τ_θ` and `λ_θ` and their log-normal corrections. Minus infinity
    /// outside the domain.
    pub fn log_accept_angular_cov(&self, state: &ChainState, proposal: &AngularParams) -> Result<f64> {
        let Some(ang) = &state.angular else { return Ok(0.0) };
        let p = &ang.params;
        let q = proposal;
        if !(q.tau > 0.0 && q.range > 0.0 && q.rho.abs() < 1.0 && q.kappa > 0.0 && q.kappa <= 2.0) {
            return Ok(f64::NEG_INFINITY);
        }
        let priors = self.priors.angular.as_ref().expect("validated");
        let e = self.centered_components(state);
        let now = self.separable_loglik(p.tau, p.rho, &self.angular_stats(&e, p.range, p.kappa)?);
        let Ok(stats) = self.angular_stats(&e, q.range, q.kappa) else { return Ok(f64::NEG_INFINITY) };
        let next = self.separable_loglik(q.tau, q.rho, &stats);
        Ok(next - now + priors.tau.logpdf(q.tau) - priors.tau.logpdf(p.tau) + priors.range.logpdf(q.range)
            - priors.range.logpdf(p.range)
            + (q.tau / p.tau).ln()
            + (q.range / p.range).ln()
            + (q.kappa / p.kappa).ln())
    }

    /// Step 6: log-normal moves for `τ_θ` and `λ_θ`, a uniform window move for
    /// `ρ_θ` (rejected outside `(-1, 1)`), and optionally the correlation shape.
    pub fn update_angular_cov<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        tuning: &mut TuningState,
        rng: &mut R,
    ) -> Result<()> {
        let Some(ang) = &state.angular else { return Ok(()) };
        let priors = self.priors.angular.as_ref().expect("validated");
        let e = self.centered_components(state);
        let mut p = ang.params.clone();
        let mut stats = self.angular_stats(&e, p.range, p.kappa)?;
        let mut ll = self.separable_loglik(p.tau, p.rho, &stats);

        // tau_theta
        let step = tuning.tau_theta_step;
        let (tau_p, corr) = lognormal_step(p.tau, step, rng)?;
        let ll_p = self.separable_loglik(tau_p, p.rho, &stats);
        let log_alpha = ll_p - ll + priors.tau.logpdf(tau_p) - priors.tau.logpdf(p.tau) + corr;
        let ok = accept(log_alpha, rng);
        if ok {
            p.tau = tau_p;
            ll = ll_p;
        }
        tuning.tau_theta_step = tuning.record(Block::TauTheta, ok, log_alpha, step);

        // lambda_theta
        let step = tuning.lambda_theta_step;
        let (range_p, corr) = lognormal_step(p.range, step, rng)?;
        let (log_alpha, cand) = match self.angular_stats(&e, range_p, p.kappa) {
            Ok(s) => {
                let ll_p = self.separable_loglik(p.tau, p.rho, &s);
                (ll_p - ll + priors.range.logpdf(range_p) - priors.range.logpdf(p.range) + corr, Some((s, ll_p)))
            }
            Err(_) => (f64::NEG_INFINITY, None),
        };
        let ok = accept(log_alpha, rng);
        if ok {
            let (s, ll_p) = cand.expect("finite acceptance implies statistics");
            p.range = range_p;
            stats = s;
            ll = ll_p;
        }
        tuning.lambda_theta_step = tuning.record(Block::LambdaTheta, ok, log_alpha, step);

        // rho_theta, symmetric window
        let eps = tuning.rho_eps;
        let rho_p = if eps > 0.0 { p.rho + rng.random_range(-eps..eps) } else { p.rho };
        let log_alpha = if rho_p.abs() < 1.0 {
            self.separable_loglik(p.tau, rho_p, &stats) - ll
        } else {
            f64::NEG_INFINITY
        };
        let ok = accept(log_alpha, rng);
        if ok {
            p.rho = rho_p;
            ll = self.separable_loglik(p.tau, p.rho, &stats);
        }
        tuning.rho_eps = tuning.record(Block::RhoTheta, ok, log_alpha, eps).min(1.0);

        if self.angular_spec().sample_kappa {
            let step = tuning.kappa_theta_step;
            let (kappa_p, corr) = lognormal_step(p.kappa, step, rng)?;
            let log_alpha = if kappa_p <= 2.0 {
                match self.angular_stats(&e, p.range, kappa_p) {
                    Ok(s) => self.separable_loglik(p.tau, p.rho, &s) - ll + corr,
                    Err(_) => f64::NEG_INFINITY,
                }
            } else {
                f64::NEG_INFINITY
            };
            let ok = accept(log_alpha, rng);
            if ok {
                p.kappa = kappa_p;
            }
            tuning.kappa_theta_step = tuning.record(Block::KappaTheta, ok, log_alpha, step);
        }
        state.angular.as_mut().expect("angular state").params = p;
        Ok(())
    }

    // ---------------------------------------------------------------------
    // Step 7: ranges (and optionally shapes) of the GEV layers

    fn gp_loglik(&self, resid: &DVector<f64>, sill: f64, range: f64, kappa: f64) -> f64 {
        match self.layer_corr(range, kappa) {
            Ok(c) => {
                let k = resid.len() as f64;
                -0.5 * (k * LN_2PI + k * sill.ln() + c.log_det() + c.quad_form(resid) / sill)
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Step 7 log acceptance ratio for moving the layer's range to `proposal`:
    /// GP density ratio, Gamma prior ratio and the log-normal correction.
    pub fn log_accept_range(&self, state: &ChainState, layer: Layer, proposal: f64) -> f64 {
        let l = state.layer(layer);
        let resid = self.residual(state, layer);
        let prior = self.priors.layer(layer).range;
        self.gp_loglik(&resid, l.sill, proposal, l.kappa) - self.gp_loglik(&resid, l.sill, l.range, l.kappa)
            + (prior.shape - 1.0) * (proposal / l.range).ln()
            + (l.range - proposal) / prior.scale
            + (proposal / l.range).ln()
    }

    /// Step 7 for one layer.
    pub fn update_range_gev<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        tuning: &mut TuningState,
        layer: Layer,
        rng: &mut R,
    ) -> Result<()> {
        let step = tuning.range_steps[layer.index()];
        let current = state.layer(layer).range;
        let (proposal, _) = lognormal_step(current, step, rng)?;
        let log_alpha = self.log_accept_range(state, layer, proposal);
        let ok = accept(log_alpha, rng);
        if ok {
            state.layer_mut(layer).range = proposal;
        }
        tuning.range_steps[layer.index()] = tuning.record(Block::range(layer), ok, log_alpha, step);

        if self.spec.layer(layer).sample_kappa {
            let step = tuning.kappa_steps[layer.index()];
            let l = state.layer(layer);
            let (kappa_p, corr) = lognormal_step(l.kappa, step, rng)?;
            let log_alpha = if kappa_p <= 2.0 {
                let resid = self.residual(state, layer);
                self.gp_loglik(&resid, l.sill, l.range, kappa_p) - self.gp_loglik(&resid, l.sill, l.range, l.kappa)
                    + corr
            } else {
                f64::NEG_INFINITY
            };
            let ok = accept(log_alpha, rng);
            if ok {
                state.layer_mut(layer).kappa = kappa_p;
            }
            tuning.kappa_steps[layer.index()] = tuning.record(Block::kappa(layer), ok, log_alpha, step);
        }
        Ok(())
    }

    /// One full transition of the chain.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut ChainState, tuning: &mut TuningState, rng: &mut R) -> Result<()> {
        for layer in Layer::ALL {
            self.update_gev_layer(state, tuning, layer, rng)?;
        }
        self.update_radii(state, tuning, rng)?;
        self.update_beta_theta(state, rng)?;
        for layer in Layer::ALL {
            self.update_beta_gev(state, layer, rng)?;
        }
        for layer in Layer::ALL {
            self.update_sill_gev(state, layer, rng)?;
        }
        self.update_angular_cov(state, tuning, rng)?;
        for layer in Layer::ALL {
            self.update_range_gev(state, tuning, layer, rng)?;
        }
        tuning.iteration += 1;
        Ok(())
    }
}

/// GP log density of a layer's field under the state's hyperparameters,
/// evaluated from scratch through a full factorization.
pub fn gp_log_density(data: &Dataset, spec: &ModelSpec, state: &ChainState, layer: Layer) -> Result<f64> {
    let l = state.layer(layer);
    let terms = &spec.layer(layer).terms;
    let no_gev = GevParams { mu: 0.0, sigma: 1.0, xi: 0.0 };
    let design = DMatrix::from_fn(data.k(), terms.len(), |j, t| terms[t].evaluate(&data.sites[j], &no_gev));
    let cov = crate::numerics::build_gev_cov(
        &data.coords(),
        &crate::numerics::CovParams { sill: l.sill, range: l.range, shape: l.kappa },
    )?;
    crate::numerics::mvn_logpdf(&l.values, &(design * &l.beta), &cov)
}
