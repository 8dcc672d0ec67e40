//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::TAU;

use exang::extremes::{gev_cdf, gev_logpdf, GevParams};
use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn simpson_step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let f = &f as &dyn Fn(f64) -> f64;
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Integral over consecutive breakpoints.
pub fn integrate_pieces(f: impl Fn(f64) -> f64, breaks: &[f64], tol: f64) -> f64 {
    breaks.windows(2).map(|w| integrate(&f, w[0], w[1], tol)).sum()
}

/// Root of an increasing function by bisection.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn ks_two_sample_critical_1pct(na: usize, nb: usize) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    1.6276 * ((na + nb) / (na * nb)).sqrt()
}

/// Gaussian log density through an explicit inverse and determinant.
pub fn mvn_logpdf_explicit(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let inv = cov.clone().try_inverse().expect("invertible");
    let d = x - mean;
    let q = (d.transpose() * inv * &d)[(0, 0)];
    -0.5 * (x.len() as f64 * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + q)
}

pub fn sample_mean(draws: &[DVector<f64>]) -> DVector<f64> {
    let mut m = DVector::zeros(draws[0].len());
    for d in draws {
        m += d;
    }
    m / draws.len() as f64
}

pub fn sample_cov(draws: &[DVector<f64>]) -> DMatrix<f64> {
    let m = sample_mean(draws);
    let dim = m.len();
    let mut c = DMatrix::zeros(dim, dim);
    for d in draws {
        let e = d - &m;
        c += &e * e.transpose();
    }
    c / (draws.len() as f64 - 1.0)
}

/// Checks empirical mean and covariance of draws against analytic values
/// within `z` standard errors, using Gaussian standard errors for the
/// covariance entries.
pub fn assert_moments(draws: &[DVector<f64>], mean: &DVector<f64>, cov: &DMatrix<f64>, z: f64) {
    let n = draws.len() as f64;
    let m = sample_mean(draws);
    let c = sample_cov(draws);
    for i in 0..mean.len() {
        let se = (cov[(i, i)] / n).sqrt();
        assert!((m[i] - mean[i]).abs() < z * se, "mean[{i}]: {} vs {} (se {se})", m[i], mean[i]);
        for j in 0..mean.len() {
            let se = ((cov[(i, j)].powi(2) + cov[(i, i)] * cov[(j, j)]) / n).sqrt();
            assert!((c[(i, j)] - cov[(i, j)]).abs() < z * se, "cov[{i},{j}]: {} vs {} (se {se})", c[(i, j)], cov[(i, j)]);
        }
    }
}

/// Hartigan's dip statistic of a sample: the sup-distance from the empirical
/// CDF to the closest unimodal CDF. Solved exactly as one linear program per
/// position of the peak slope of a piecewise-linear CDF through the data.
pub fn dip_statistic(sample: &[f64]) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let nf = n as f64;
    let mut best = f64::INFINITY;
    for peak in 0..n - 1 {
        let mut p = Problem::new(OptimizationDirection::Minimize);
        let eps = p.add_var(1.0, (0.0, 1.0));
        let g: Vec<_> = (0..n).map(|_| p.add_var(0.0, (0.0, 1.0))).collect();
        for i in 0..n {
            // i/n - eps <= g_i <= (i-1)/n + eps, 1-based
            p.add_constraint(&[(g[i], 1.0), (eps, 1.0)], ComparisonOp::Ge, (i + 1) as f64 / nf);
            p.add_constraint(&[(g[i], 1.0), (eps, -1.0)], ComparisonOp::Le, i as f64 / nf);
        }
        for i in 0..n - 1 {
            p.add_constraint(&[(g[i + 1], 1.0), (g[i], -1.0)], ComparisonOp::Ge, 0.0);
        }
        for i in 0..n - 2 {
            let (d0, d1) = (x[i + 1] - x[i], x[i + 2] - x[i + 1]);
            // slope_i - slope_{i+1}, scaled by d0 d1
            let coeffs = [(g[i + 1], d1 + d0), (g[i], -d1), (g[i + 2], -d0)];
            let op = if i < peak { ComparisonOp::Le } else { ComparisonOp::Ge };
            p.add_constraint(&coeffs, op, 0.0);
        }
        if let Ok(sol) = p.solve() {
            best = best.min(sol.objective());
        }
    }
    best
}

/// Von Mises sampler (Best-Fisher).
pub fn von_mises<R: rand::Rng>(mu: f64, kappa: f64, rng: &mut R) -> f64 {
    use std::f64::consts::PI;
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        let u2: f64 = rng.random();
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.random();
            let t = if u3 > 0.5 { f.acos() } else { -f.acos() };
            return (mu + t).rem_euclid(2.0 * PI);
        }
    }
}

pub fn support(p: &GevParams) -> (f64, f64) {
    if p.xi > 0.0 {
        (p.mu - p.sigma / p.xi, f64::INFINITY)
    } else if p.xi < 0.0 {
        (f64::NEG_INFINITY, p.mu - p.sigma / p.xi)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// Integral of the density over the support, truncated where the remaining
/// tail mass (from the CDF) is below 1e-14.
pub fn density_mass(p: &GevParams) -> f64 {
    let (lo, hi) = support(p);
    let lo = if lo.is_finite() { lo } else { bisect(|z| gev_cdf(z, p) - 1e-300, -1e3, p.mu) };
    let hi = if hi.is_finite() { hi } else { bisect(|z| gev_cdf(z, p) - (1.0 - 1e-15), p.mu, 1e12) };
    let mut breaks = vec![lo];
    let mut x = lo;
    let width = (hi - lo) / 2000.0;
    while x + width < hi {
        x += width;
        breaks.push(x);
    }
    breaks.push(hi);
    integrate_pieces(|z| gev_logpdf(z, p).exp(), &breaks, 1e-12)
}

/// `log ∫₀^∞ r φ₂(r u(θ); m, Σ) dr` by adaptive quadrature on
/// `[0, r* + 40 w]`, with the exponent shifted by its minimum over `r ≥ 0`.
pub fn radial_quadrature(theta: f64, m: &Vector2<f64>, s: &Matrix2<f64>) -> f64 {
    let inv = s.try_inverse().unwrap();
    let det = s.determinant();
    let u = Vector2::new(theta.cos(), theta.sin());
    let q = |r: f64| {
        let e = u * r - m;
        e.dot(&(inv * e))
    };
    let a = u.dot(&(inv * u));
    let peak = (u.dot(&(inv * m)) / a).max(0.0);
    let w = a.sqrt().recip();
    let q0 = q(peak);
    let f = |r: f64| r * (-0.5 * (q(r) - q0)).exp();
    let upper = peak + 40.0 * w;
    let breaks: Vec<f64> = (0..=256).map(|i| upper * i as f64 / 256.0).collect();
    let scale = w * (peak + w);
    integrate_pieces(f, &breaks, 1e-15 * scale).ln() - 0.5 * q0 - (TAU * det.sqrt()).ln()
}

pub fn random_pair(r: &mut impl Rng) -> (Vector2<f64>, Matrix2<f64>) {
    let m = Vector2::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
    let a = Matrix2::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    let s = a * a.transpose() + Matrix2::identity() * 0.2;
    (m, s)
}
