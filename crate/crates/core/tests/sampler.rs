mod common;

use std::f64::consts::TAU;

use approx::assert_relative_eq;
use common::*;
use exang::extremes::gev_sample;
use exang::model::{GaussianPrior, InvGammaPrior};
use exang::numerics::SpdMatrix;
use exang::pgp::sample_pgp;
use exang::sampler::*;
use exang::simulator::{gev_only_spec, simulate_dataset, Configuration, SimConfig};
use exang::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{Continuous, Gamma};
use statrs::function::gamma::gamma_ur;

fn intercept_spec() -> ModelSpec {
    ModelSpec {
        mu: LayerSpec::new(vec![Term::Intercept]),
        sigma: LayerSpec::new(vec![Term::Intercept]),
        xi: LayerSpec::new(vec![Term::Intercept]),
        angular: Some(AngularSpec::new(vec![Term::Intercept], vec![Term::Intercept])),
    }
}

fn layer(values: &[f64], beta: &[f64], sill: f64, range: f64) -> GevLayerState {
    GevLayerState {
        values: DVector::from_column_slice(values),
        beta: DVector::from_column_slice(beta),
        sill,
        range,
        kappa: 1.0,
    }
}

fn single_site_state(radius: f64, angle: f64) -> ChainState {
    ChainState {
        mu: layer(&[0.5], &[0.5], 1e12, 1.0),
        sigma: layer(&[1.0], &[1.0], 1.0, 1.0),
        xi: layer(&[0.1], &[0.1], 1.0, 1.0),
        angular: Some(AngularState {
            params: AngularParams { beta: DVector::zeros(2), tau: 1.0, rho: 0.0, range: 1.0, kappa: 1.0 },
            radii: DMatrix::from_element(1, 1, radius),
            angles: DMatrix::from_element(1, 1, angle),
        }),
    }
}

fn single_site_data(z: f64, angle: f64) -> Dataset {
    Dataset::new(vec![Site::new("a", 0.0, 0.0, 0.0)], vec![vec![Some(z)]], vec![vec![Some(angle)]]).unwrap()
}

fn fixture(config: Configuration, k: usize, n: usize, seed: u64) -> (Dataset, ChainState) {
    let (data, truth) = simulate_dataset(&SimConfig::new(config, k, n, seed)).unwrap();
    let state = truth.chain_state(&data);
    (data, state)
}

fn gev_ll(z: f64, mu: f64, sigma: f64, xi: f64) -> f64 {
    let t = 1.0 + xi * (z - mu) / sigma;
    if sigma <= 0.0 || t <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -sigma.ln() - (1.0 + 1.0 / xi) * t.ln() - t.powf(-1.0 / xi)
}

fn explicit_corr(data: &Dataset, range: f64, kappa: f64) -> DMatrix<f64> {
    let k = data.k();
    DMatrix::from_fn(k, k, |a, b| {
        let (p, q) = (data.sites[a].coords, data.sites[b].coords);
        let h = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        (-(h / range).powf(kappa)).exp()
    })
}

fn explicit_design(terms: &[Term], data: &Dataset) -> DMatrix<f64> {
    DMatrix::from_fn(data.k(), terms.len(), |j, t| match terms[t] {
        Term::Intercept => 1.0,
        Term::Lon => data.sites[j].lon,
        Term::Lat => data.sites[j].lat,
        Term::Alt => data.sites[j].alt,
        _ => unreachable!(),
    })
}

fn gp_ll(v: &DVector<f64>, data: &Dataset, terms: &[Term], beta: &DVector<f64>, sill: f64, range: f64) -> f64 {
    let cov = explicit_corr(data, range, 1.0) * sill;
    mvn_logpdf_explicit(v, &(explicit_design(terms, data) * beta), &cov)
}

/// Stacked covariance `T ⊗ C` built entry by entry.
fn explicit_angular_cov(data: &Dataset, p: &AngularParams) -> DMatrix<f64> {
    let k = data.k();
    let c = explicit_corr(data, p.range, p.kappa);
    let t = [[p.tau, p.rho * p.tau.sqrt()], [p.rho * p.tau.sqrt(), 1.0]];
    DMatrix::from_fn(2 * k, 2 * k, |r, s| t[r / k][s / k] * c[(r % k, s % k)])
}

fn explicit_angular_mean(spec: &AngularSpec, data: &Dataset, beta: &DVector<f64>, gev: &[exang::GevParams]) -> DVector<f64> {
    let k = data.k();
    let eval = |t: &Term, j: usize| match t {
        Term::Intercept => 1.0,
        Term::Mu => gev[j].mu,
        Term::Xi => gev[j].xi,
        Term::Sigma => gev[j].sigma,
        _ => unreachable!(),
    };
    DVector::from_fn(2 * k, |r, _| {
        let j = r % k;
        if r < k {
            spec.cos.iter().enumerate().map(|(t, term)| beta[t] * eval(term, j)).sum()
        } else {
            spec.sin.iter().enumerate().map(|(t, term)| beta[spec.cos.len() + t] * eval(term, j)).sum()
        }
    })
}

#[test]
fn unchanged_proposals_have_unit_acceptance() {
    let (data, state) = fixture(Configuration::III, 6, 5, 1);
    let spec = Configuration::III.model_spec();
    let priors = Priors::default_for(&spec);
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    for l in Layer::ALL {
        for j in 0..data.k() {
            let v = state.layer(l).values[j];
            assert_eq!(g.log_accept_gev_site(&state, l, j, v).unwrap(), 0.0);
        }
        assert!(g.log_accept_range(&state, l, state.layer(l).range).abs() < 1e-12);
    }
    let same = state.angular.as_ref().unwrap().params.clone();
    assert!(g.log_accept_angular_cov(&state, &same).unwrap().abs() < 1e-12);
}

#[test]
fn out_of_support_proposals_are_rejected() {
    let (data, state) = fixture(Configuration::II, 5, 8, 2);
    let spec = Configuration::II.model_spec();
    let priors = Priors::default_for(&spec);
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    for j in 0..data.k() {
        let p = state.gev(j);
        let z = data.site_maxima(j);
        let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // location that puts the lower (ξ > 0) or upper (ξ < 0) endpoint past an observation
        let mu = if p.xi > 0.0 { lo + p.sigma / p.xi + 1.0 } else { hi + p.sigma / p.xi - 1.0 };
        assert_eq!(g.log_accept_gev_site(&state, Layer::Mu, j, mu).unwrap(), f64::NEG_INFINITY);
        assert_eq!(g.log_accept_gev_site(&state, Layer::Sigma, j, -0.1).unwrap(), f64::NEG_INFINITY);
        assert_eq!(g.log_accept_gev_site(&state, Layer::Sigma, j, 0.0).unwrap(), f64::NEG_INFINITY);
    }
}

#[test]
fn site_acceptance_matches_likelihood_ratio() {
    let (z, step) = (1.0, 0.8);
    let data = single_site_data(z, 0.3);
    let spec = intercept_spec();
    let priors = Priors::default_for(&spec);
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let state = single_site_state(1.0, 0.3);
    let mut tuning = TuningState::new(1);
    tuning.adapting = false;
    tuning.site_steps[0][0] = step;
    let mut r = rng(30);
    let trials = 100_000;
    let mut accepted = 0usize;
    for _ in 0..trials {
        let mut s = state.clone();
        if g.update_gev_site(&mut s, &mut tuning, Layer::Mu, 0, &mut r).unwrap() {
            accepted += 1;
        }
    }
    let rate = accepted as f64 / trials as f64;
    // E[min(1, LR)] over the Gaussian random-walk proposal
    let (mu, sigma, xi) = (0.5, 1.0, 0.1);
    let base = gev_ll(z, mu, sigma, xi);
    let f = |e: f64| {
        let lr = (gev_ll(z, mu + step * e, sigma, xi) - base).exp();
        (-0.5 * e * e).exp() / TAU.sqrt() * lr.min(1.0)
    };
    let breaks: Vec<f64> = (0..=80).map(|i| -10.0 + 0.25 * i as f64).collect();
    let expected = integrate_pieces(f, &breaks, 1e-12);
    let se = (expected * (1.0 - expected) / trials as f64).sqrt();
    assert!((rate - expected).abs() < 4.0 * se, "{rate} vs {expected}");
}

#[test]
fn zero_radius_step_keeps_radius() {
    let data = single_site_data(1.0, 0.4);
    let spec = intercept_spec();
    let priors = Priors::default_for(&spec);
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let mut state = single_site_state(1.7, 0.4);
    let mut tuning = TuningState::frozen_zero(1);
    let mut r = rng(31);
    for _ in 0..10 {
        assert!(g.update_radius(&mut state, &mut tuning, 0, 0, &mut r).unwrap());
    }
    assert_eq!(state.angular.as_ref().unwrap().radii[(0, 0)], 1.7);
}

#[test]
fn radius_chain_is_rayleigh() {
    let data = single_site_data(1.0, 0.4);
    let spec = intercept_spec();
    let priors = Priors::default_for(&spec);
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let mut state = single_site_state(1.0, 0.4);
    let mut tuning = TuningState::new(1);
    tuning.adapting = false;
    tuning.radius_steps[0] = 1.0;
    let mut r = rng(32);
    let thin = 10;
    let mut draws = Vec::with_capacity(100_000);
    for t in 0..(1000 + 100_000 * thin) {
        g.update_radius(&mut state, &mut tuning, 0, 0, &mut r).unwrap();
        if t >= 1000 && (t - 1000) % thin == 0 {
            draws.push(state.angular.as_ref().unwrap().radii[(0, 0)]);
        }
    }
    let d = ks_statistic(&draws, |x| 1.0 - (-0.5 * x * x).exp());
    assert!(d < ks_critical_1pct(draws.len()), "KS {d}");
    let rate = tuning.counter(Block::Radius).rate().unwrap();
    assert!((0.0..=1.0).contains(&rate));
}

#[test]
fn angular_coefficients_scalar_conjugacy() {
    // X = (2, 0), identity covariance, N(0, I) prior
    let data = single_site_data(1.0, 0.0);
    let spec = intercept_spec();
    let mut priors = Priors::default_for(&spec);
    priors.angular.as_mut().unwrap().beta = GaussianPrior::isotropic(2, 0.0, 1.0);
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let state = single_site_state(2.0, 0.0);
    let (mean, prec) = g.beta_theta_posterior(&state).unwrap().unwrap();
    assert_relative_eq!(mean[0], 1.0, max_relative = 1e-12);
    assert!(mean[1].abs() < 1e-12);
    let cov = prec.inverse();
    assert_relative_eq!(cov[(0, 0)], 0.5, max_relative = 1e-12);
    assert_relative_eq!(cov[(1, 1)], 0.5, max_relative = 1e-12);
}

#[test]
fn angular_coefficients_reach_gls_with_flat_prior() {
    let spec = ModelSpec {
        angular: Some(AngularSpec::new(vec![Term::Intercept, Term::Mu], vec![Term::Intercept])),
        ..intercept_spec()
    };
    let (data, _) = fixture(Configuration::I, 4, 3, 3);
    let mut priors = Priors::default_for(&spec);
    priors.angular.as_mut().unwrap().beta = GaussianPrior::isotropic(3, 0.0, 1e12);
    let mut r = rng(33);
    let mut state = ChainState::initialize(&data, &spec, &priors).unwrap();
    {
        let a = state.angular.as_mut().unwrap();
        a.params = AngularParams { beta: DVector::zeros(3), tau: 1.3, rho: -0.4, range: 0.7, kappa: 1.0 };
        a.radii = DMatrix::from_fn(3, 4, |_, _| r.random_range(0.5..2.0));
    }
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let (mean, _) = g.beta_theta_posterior(&state).unwrap().unwrap();

    let a = state.angular.as_ref().unwrap();
    let cov_inv = explicit_angular_cov(&data, &a.params).try_inverse().unwrap();
    let k = data.k();
    let mut d = DMatrix::zeros(2 * k, 3);
    for j in 0..k {
        d[(j, 0)] = 1.0;
        d[(j, 1)] = state.mu.values[j];
        d[(k + j, 2)] = 1.0;
    }
    let xbar = (0..data.n()).map(|i| a.x_row(i)).fold(DVector::zeros(2 * k), |s, x| s + x) / data.n() as f64;
    let gls = (d.transpose() * &cov_inv * &d).try_inverse().unwrap() * d.transpose() * &cov_inv * xbar;
    for t in 0..3 {
        assert!((mean[t] - gls[t]).abs() < 1e-6 * (1.0 + gls[t].abs()), "{mean} vs {gls}");
    }
}

#[test]
fn gev_coefficients_scalar_conjugacy() {
    let data = single_site_data(1.0, 0.0);
    let spec = intercept_spec();
    let mut priors = Priors::default_for(&spec);
    priors.mu.beta = GaussianPrior::isotropic(1, 0.0, 1.0);
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let mut state = single_site_state(1.0, 0.0);
    state.mu = layer(&[2.0], &[0.0], 1.0, 1.0);
    let (mean, prec) = g.beta_gev_posterior(&state, Layer::Mu).unwrap();
    assert_relative_eq!(mean[0], 1.0, max_relative = 1e-12);
    assert_relative_eq!(prec.inverse()[(0, 0)], 0.5, max_relative = 1e-12);
}

#[test]
fn gev_coefficients_reach_gls_with_flat_prior() {
    let spec = gev_only_spec();
    let (data, mut state) = fixture(Configuration::I, 8, 2, 4);
    state.angular = None;
    let mut priors = Priors::default_for(&spec);
    priors.mu.beta = GaussianPrior::isotropic(3, 0.0, 1e12);
    state.mu.sill = 0.7;
    state.mu.range = 0.8;
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let (mean, _) = g.beta_gev_posterior(&state, Layer::Mu).unwrap();
    let c_inv = explicit_corr(&data, 0.8, 1.0).try_inverse().unwrap();
    let d = explicit_design(&spec.mu.terms, &data);
    let gls = (d.transpose() * &c_inv * &d).try_inverse().unwrap() * d.transpose() * &c_inv * &state.mu.values;
    for t in 0..3 {
        assert!((mean[t] - gls[t]).abs() < 1e-6 * (1.0 + gls[t].abs()), "{mean} vs {gls}");
    }
}

#[test]
fn sill_full_conditional_formula() {
    let spec = gev_only_spec();
    let (data, mut state) = fixture(Configuration::I, 2, 2, 5);
    state.angular = None;
    let mut priors = Priors::default_for(&spec);
    priors.sigma.sill = InvGammaPrior { shape: 1.0, scale: 1.0 };
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let s = &state.sigma;
    let resid = &s.values - explicit_design(&spec.sigma.terms, &data) * &s.beta;
    let q = (resid.transpose() * explicit_corr(&data, s.range, 1.0).try_inverse().unwrap() * &resid)[(0, 0)];
    let (shape, rate) = g.sill_posterior(&state, Layer::Sigma).unwrap();
    assert_eq!(shape, 2.0);
    assert_relative_eq!(rate, 1.0 + 0.5 * q, max_relative = 1e-12);
}

#[test]
fn sill_draws_follow_inverse_gamma() {
    let spec = gev_only_spec();
    let (data, mut state) = fixture(Configuration::I, 3, 2, 6);
    state.angular = None;
    let priors = Priors::default_for(&spec);
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let (shape, rate) = g.sill_posterior(&state, Layer::Mu).unwrap();
    let mut r = rng(34);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            g.update_sill_gev(&mut state, Layer::Mu, &mut r).unwrap();
            state.mu.sill
        })
        .collect();
    let d = ks_statistic(&draws, |x| gamma_ur(shape, rate / x));
    assert!(d < ks_critical_1pct(draws.len()), "KS {d}");
}

#[test]
fn rho_outside_unit_interval_is_rejected() {
    let (data, state) = fixture(Configuration::I, 4, 3, 7);
    let spec = Configuration::I.model_spec();
    let priors = Priors::default_for(&spec);
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let mut p = state.angular.as_ref().unwrap().params.clone();
    for rho in [1.2, 1.0, -1.0, -3.0] {
        p.rho = rho;
        assert_eq!(g.log_accept_angular_cov(&state, &p).unwrap(), f64::NEG_INFINITY);
    }
    // a wide window keeps the chain inside (-1, 1)
    let mut s = state.clone();
    let mut tuning = TuningState::frozen_zero(data.k());
    tuning.rho_eps = 1.0;
    let mut r = rng(35);
    for _ in 0..500 {
        tuning.rho_eps = 1.0;
        g.update_angular_cov(&mut s, &mut tuning, &mut r).unwrap();
        assert!(s.angular.as_ref().unwrap().params.rho.abs() < 1.0);
    }
    assert!(tuning.counter(Block::RhoTheta).accepted > 0);
}

#[test]
fn angular_tau_is_recovered() {
    let spec = intercept_spec();
    let priors = Priors::default_for(&spec);
    let mut r = rng(36);
    let n = 200;
    let truth = exang::GevParams::new(10.0, 2.0, 0.1).unwrap();
    let mean = DVector::from_vec(vec![1.5, 0.5]);
    let cov = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0])).unwrap();
    let mut maxima = Vec::new();
    let mut angles = Vec::new();
    for _ in 0..n {
        maxima.push(vec![Some(gev_sample(&truth, &mut r))]);
        angles.push(vec![Some(sample_pgp(&mean, &cov, &mut r).unwrap().0[0])]);
    }
    let data = Dataset::new(vec![Site::new("a", 0.0, 0.0, 0.0)], maxima, angles).unwrap();
    let settings = ChainSettings { n_iter: 4000, burnin: 1500, thin: 1, seed: 11, n_chains: 1 };
    let run = run_chain(&data, &spec, &priors, &settings).unwrap();
    let mut tau: Vec<f64> = run.pooled().iter().map(|d| d.angular.as_ref().unwrap().tau).collect();
    tau.sort_by(f64::total_cmp);
    let median = tau[tau.len() / 2];
    assert!((median - 1.0).abs() < 0.25, "median tau_theta {median}");
}

#[test]
fn range_acceptance_matches_literal_formula() {
    let spec = gev_only_spec();
    let (data, mut state) = fixture(Configuration::I, 25, 2, 8);
    state.angular = None;
    let priors = Priors::default_for(&spec);
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let prior = priors.mu.range;
    let gamma = Gamma::new(prior.shape, 1.0 / prior.scale).unwrap();
    let mut r = rng(37);
    for _ in 0..100 {
        state.mu.values = DVector::from_fn(25, |_, _| r.random_range(-3.0..3.0));
        state.mu.beta = DVector::from_fn(3, |_, _| r.random_range(-2.0..2.0));
        state.mu.sill = r.random_range(0.1..2.0);
        state.mu.range = r.random_range(0.1..2.0);
        let proposal = state.mu.range * (0.5 * r.random_range(-2.0..2.0f64)).exp();
        let m = &state.mu;
        let literal = gp_ll(&m.values, &data, &spec.mu.terms, &m.beta, m.sill, proposal)
            - gp_ll(&m.values, &data, &spec.mu.terms, &m.beta, m.sill, m.range)
            + gamma.ln_pdf(proposal)
            - gamma.ln_pdf(m.range)
            + (proposal / m.range).ln();
        let got = g.log_accept_range(&state, Layer::Mu, proposal);
        assert!((got - literal).abs() < 1e-8 * (1.0 + literal.abs()), "{got} vs {literal}");
    }
}

#[test]
fn tau_theta_move_includes_prior_and_correction() {
    let (data, state) = fixture(Configuration::II, 5, 4, 9);
    let spec = Configuration::II.model_spec();
    let priors = Priors::default_for(&spec);
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let a = state.angular.as_ref().unwrap();
    let mut p = a.params.clone();
    p.tau *= 1.3;
    let ll = |params: &AngularParams| -> f64 {
        let cov = explicit_angular_cov(&data, params);
        let mean = explicit_angular_mean(spec.angular.as_ref().unwrap(), &data, &params.beta, &state.gev_all());
        let jac: f64 = a.radii.iter().map(|r| r.ln()).sum();
        (0..data.n()).map(|i| mvn_logpdf_explicit(&a.x_row(i), &mean, &cov)).sum::<f64>() + jac
    };
    let tp = priors.angular.as_ref().unwrap().tau;
    let gamma = Gamma::new(tp.shape, 1.0 / tp.scale).unwrap();
    let literal = ll(&p) - ll(&a.params) + gamma.ln_pdf(p.tau) - gamma.ln_pdf(a.params.tau) + 1.3f64.ln();
    let got = g.log_accept_angular_cov(&state, &p).unwrap();
    assert!((got - literal).abs() < 1e-8 * (1.0 + literal.abs()), "{got} vs {literal}");
    assert_relative_eq!(g.augmented_loglik(&state).unwrap(), ll(&a.params), max_relative = 1e-10);
}

/// Step 1 against full-density ratios: GEV terms, the angular likelihood of
/// every replicate and the k-dimensional GP prior.
fn check_site_ratio(config: Configuration, seed: u64, scale: f64) {
    let spec = config.model_spec();
    let (data, state) = fixture(config, 7, 4, seed);
    let priors = Priors::default_for(&spec);
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let ang = spec.angular.as_ref().unwrap();
    let a = state.angular.as_ref().unwrap();
    let cov = explicit_angular_cov(&data, &a.params);
    let mut r = rng(seed);
    for l in Layer::ALL {
        for j in 0..data.k() {
            let old = state.layer(l).values[j];
            let proposal = old + scale * r.random_range(-1.0..1.0);
            let mut next = state.clone();
            next.layer_mut(l).values[j] = proposal;
            let (p0, p1) = (state.gev(j), next.gev(j));
            if l == Layer::Sigma && proposal <= 0.0 {
                continue;
            }
            let r1: f64 = data.site_maxima(j).iter().map(|&z| gev_ll(z, p1.mu, p1.sigma, p1.xi) - gev_ll(z, p0.mu, p0.sigma, p0.xi)).sum();
            if !r1.is_finite() {
                continue;
            }
            let m0 = explicit_angular_mean(ang, &data, &a.params.beta, &state.gev_all());
            let m1 = explicit_angular_mean(ang, &data, &a.params.beta, &next.gev_all());
            let r2: f64 = (0..data.n())
                .map(|i| mvn_logpdf_explicit(&a.x_row(i), &m1, &cov) - mvn_logpdf_explicit(&a.x_row(i), &m0, &cov))
                .sum();
            let terms = &spec.layer(l).terms;
            let s = state.layer(l);
            let r3 = gp_ll(&next.layer(l).values, &data, terms, &s.beta, s.sill, s.range)
                - gp_ll(&s.values, &data, terms, &s.beta, s.sill, s.range);
            let got = g.log_accept_gev_site(&state, l, j, proposal).unwrap();
            let expected = r1 + r2 + r3;
            assert!((got - expected).abs() < 1e-10 * (1.0 + expected.abs()), "{l:?} site {j}: {got} vs {expected}");
        }
    }
}

#[test]
fn site_ratio_matches_full_densities() {
    check_site_ratio(Configuration::II, 10, 0.05);
    check_site_ratio(Configuration::III, 11, 0.05);
}

#[test]
fn independent_mean_drops_angular_factor() {
    let (data, state) = fixture(Configuration::I, 8, 6, 12);
    let coupled = Configuration::I.model_spec();
    let gev = gev_only_spec();
    let pc = Priors::default_for(&coupled);
    let pg = Priors::default_for(&gev);
    let gc = Gibbs::new(&data, &coupled, &pc).unwrap();
    let gg = Gibbs::new(&data, &gev, &pg).unwrap();
    let bare = ChainState { angular: None, ..state.clone() };
    let mut r = rng(38);
    for l in Layer::ALL {
        for j in 0..data.k() {
            let proposal = state.layer(l).values[j] + 0.05 * r.random_range(-1.0..1.0);
            let a = gc.log_accept_gev_site(&state, l, j, proposal).unwrap();
            let b = gg.log_accept_gev_site(&bare, l, j, proposal).unwrap();
            assert!(a == b || (a - b).abs() < 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn zero_steps_leave_metropolis_components_fixed() {
    let (data, state) = fixture(Configuration::II, 5, 4, 13);
    let spec = Configuration::II.model_spec();
    let priors = Priors::default_for(&spec);
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let mut next = state.clone();
    let mut tuning = TuningState::frozen_zero(data.k());
    g.step(&mut next, &mut tuning, &mut rng(39)).unwrap();
    for l in Layer::ALL {
        assert_eq!(next.layer(l).values, state.layer(l).values);
        assert_eq!(next.layer(l).range, state.layer(l).range);
        assert_ne!(next.layer(l).beta, state.layer(l).beta);
        assert_ne!(next.layer(l).sill, state.layer(l).sill);
    }
    let (a, b) = (next.angular.unwrap(), state.angular.unwrap());
    assert_eq!(a.radii, b.radii);
    assert_eq!((a.params.tau, a.params.rho, a.params.range), (b.params.tau, b.params.rho, b.params.range));
    assert_ne!(a.params.beta, b.params.beta);
}

#[test]
fn hundred_steps_keep_invariants() {
    let (data, _) = fixture(Configuration::I, 10, 10, 14);
    let spec = Configuration::I.model_spec();
    let priors = Priors::default_for(&spec);
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let mut state = ChainState::initialize(&data, &spec, &priors).unwrap();
    let mut tuning = TuningState::new(data.k());
    let mut r = rng(40);
    for _ in 0..100 {
        g.step(&mut state, &mut tuning, &mut r).unwrap();
        state.check_invariants(&data).unwrap();
    }
    for (_, rate) in tuning.acceptance_rates() {
        assert!((0.0..=1.0).contains(&rate));
    }
    assert_eq!(tuning.iteration, 100);
}

#[test]
fn missing_cells_are_imputed() {
    let (full, _) = fixture(Configuration::II, 6, 5, 15);
    let mut maxima: Vec<Vec<Option<f64>>> = (0..full.n()).map(|i| (0..full.k()).map(|j| full.maximum(i, j)).collect()).collect();
    let mut angles: Vec<Vec<Option<f64>>> = (0..full.n()).map(|i| (0..full.k()).map(|j| full.angle(i, j)).collect()).collect();
    maxima[0][1] = None;
    angles[2][3] = None;
    angles[4][0] = None;
    let data = Dataset::new(full.sites.clone(), maxima, angles).unwrap();
    let spec = Configuration::II.model_spec();
    let priors = Priors::default_for(&spec);
    let g = Gibbs::new(&data, &spec, &priors).unwrap();
    let mut state = ChainState::initialize(&data, &spec, &priors).unwrap();
    let mut tuning = TuningState::new(data.k());
    let mut r = rng(41);
    let mut seen = Vec::new();
    for _ in 0..200 {
        g.step(&mut state, &mut tuning, &mut r).unwrap();
        state.check_invariants(&data).unwrap();
        let a = state.angular.as_ref().unwrap();
        assert!((0.0..TAU).contains(&a.angles[(2, 3)]));
        assert_eq!(Some(a.angles[(0, 0)]), data.angle(0, 0));
        seen.push(a.angles[(2, 3)]);
    }
    seen.dedup();
    assert!(seen.len() > 100);
}

#[test]
fn runs_are_deterministic_and_streams_distinct() {
    let (data, _) = fixture(Configuration::I, 5, 5, 16);
    let spec = Configuration::I.model_spec();
    let priors = Priors::default_for(&spec);
    let settings = ChainSettings { n_iter: 60, burnin: 20, thin: 2, seed: 7, n_chains: 4 };
    let a = run_chain(&data, &spec, &priors, &settings).unwrap();
    let b = run_chain(&data, &spec, &priors, &settings).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.traces.len(), 4);
    assert_eq!(a.traces[0].draws.len(), 20);
    for c in 0..4 {
        assert_eq!(a.traces[c].chain, c);
        for d in c + 1..4 {
            assert_ne!(a.traces[c].draws, a.traces[d].draws);
        }
    }
    let other = run_chain(&data, &spec, &priors, &ChainSettings { seed: 8, ..settings.clone() }).unwrap();
    assert_ne!(a.traces[0].draws, other.traces[0].draws);
}

#[test]
fn bad_settings_and_mismatched_priors_are_rejected() {
    let (data, _) = fixture(Configuration::I, 3, 3, 17);
    let spec = Configuration::I.model_spec();
    let priors = Priors::default_for(&spec);
    let bad = ChainSettings { n_iter: 10, burnin: 10, ..Default::default() };
    assert!(run_chain(&data, &spec, &priors, &bad).is_err());
    let wrong = Priors::default_for(&Configuration::II.model_spec());
    assert!(matches!(Gibbs::new(&data, &spec, &wrong), Err(Error::Validation(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gp_ratio_matches_full_factorization(seed in 0u64..10_000, scale in 0.01f64..1.0) {
        let spec = gev_only_spec();
        let (data, mut state) = fixture(Configuration::I, 9, 2, seed);
        state.angular = None;
        let priors = Priors::default_for(&spec);
        let g = Gibbs::new(&data, &spec, &priors).unwrap();
        let mut r = rng(seed);
        let j = r.random_range(0..9);
        let v = state.mu.values[j] + scale * r.random_range(-1.0..1.0);
        let mut next = state.clone();
        next.mu.values[j] = v;
        let p0 = state.gev(j);
        let r1: f64 = data.site_maxima(j).iter().map(|&z| gev_ll(z, v, p0.sigma, p0.xi) - gev_ll(z, p0.mu, p0.sigma, p0.xi)).sum();
        prop_assume!(r1.is_finite());
        let expected = r1 + gp_log_density(&data, &spec, &next, Layer::Mu).unwrap()
            - gp_log_density(&data, &spec, &state, Layer::Mu).unwrap();
        let got = g.log_accept_gev_site(&state, Layer::Mu, j, v).unwrap();
        prop_assert!((got - expected).abs() < 1e-10 * (1.0 + expected.abs()));
    }
}

#[test]
fn initial_radii_follow_angular_concentration() {
    let (data, _) = simulate_dataset(&SimConfig::new(Configuration::III, 10, 50, 39)).unwrap();
    let spec = Configuration::III.model_spec();
    let init = ChainState::initialize(&data, &spec, &Priors::default_for(&spec)).unwrap();
    let a = init.angular.unwrap();
    let mut r: Vec<f64> = a.radii.iter().copied().collect();
    r.sort_by(f64::total_cmp);
    let median = r[r.len() / 2];
    assert!((6.0..16.0).contains(&median), "median initial radius {median}");
    let (flat, _) = simulate_dataset(&SimConfig::new(Configuration::I, 10, 50, 40)).unwrap();
    let spec = Configuration::I.model_spec();
    let init = ChainState::initialize(&flat, &spec, &Priors::default_for(&spec)).unwrap();
    assert!(init.angular.unwrap().radii.iter().all(|&v| (1.0..3.0).contains(&v)));
}
