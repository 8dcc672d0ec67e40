mod common;

use approx::assert_relative_eq;
use common::*;
use exang::extremes::*;

#[test]
fn logpdf_matches_finite_difference_of_cdf() {
    let p = GevParams::new(0.0, 1.0, 0.2).unwrap();
    let h = 1e-6;
    let fd = (gev_cdf(1.3 + h, &p) - gev_cdf(1.3 - h, &p)) / (2.0 * h);
    assert_relative_eq!(gev_logpdf(1.3, &p), fd.ln(), max_relative = 1e-8);
    // 40-digit reference
    assert_relative_eq!(gev_logpdf(1.3, &p), -1.701_551_919_172_029_5, max_relative = 1e-13);
}

#[test]
fn quantile_matches_bisection() {
    let p = GevParams::new(0.0, 1.0, 0.1).unwrap();
    let root = bisect(|z| gev_cdf(z, &p) - 0.95, -5.0, 50.0);
    let q = gev_quantile(0.95, &p).unwrap();
    assert_relative_eq!(q, root, max_relative = 1e-12);
    assert_relative_eq!(q, 3.458_415_766_194_411_5, max_relative = 1e-13);
}

#[test]
fn gumbel_samples_pass_ks() {
    let p = GevParams::new(1.0, 2.0, 0.0).unwrap();
    let mut r = rng(10);
    let draws: Vec<f64> = (0..100_000).map(|_| gev_sample(&p, &mut r)).collect();
    let d = ks_statistic(&draws, |z| gev_cdf(z, &p));
    assert!(d < ks_critical_1pct(draws.len()), "KS {d}");
}

#[test]
fn empirical_quantile_of_draws() {
    let p = GevParams::new(0.0, 1.0, 0.1).unwrap();
    let mut r = rng(11);
    let mut draws: Vec<f64> = (0..1_000_000).map(|_| gev_sample(&p, &mut r)).collect();
    draws.sort_by(f64::total_cmp);
    let emp = draws[950_000];
    let q = gev_quantile(0.95, &p).unwrap();
    assert!((emp / q - 1.0).abs() < 0.01, "{emp} vs {q}");
}

#[test]
fn density_integrates_to_one() {
    for xi in [-0.3, 0.0, 0.3] {
        let p = GevParams::new(0.5, 1.5, xi).unwrap();
        let mass = density_mass(&p);
        assert!((mass - 1.0).abs() < 1e-6, "xi={xi}: {mass}");
    }
}

#[test]
fn continuity_at_zero_shape() {
    for i in 0..=60 {
        let z = -3.0 + 0.1 * i as f64;
        let g = gev_logpdf(z, &GevParams::new(0.0, 1.0, 0.0).unwrap());
        for xi in [1e-9, -1e-9] {
            let v = gev_logpdf(z, &GevParams::new(0.0, 1.0, xi).unwrap());
            assert!((v - g).abs() < 1e-6, "z={z} xi={xi}");
        }
    }
}
